from django.apps import AppConfig


class GffdiscConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "gffdisc"
    verbose_name = "GFF disconnection experiments"
