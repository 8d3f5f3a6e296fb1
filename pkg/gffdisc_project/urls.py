"""
URL configuration for gffdisc_project project.

Only the admin is mounted; it browses the experiment run registry.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path('admin/', admin.site.urls),
]
