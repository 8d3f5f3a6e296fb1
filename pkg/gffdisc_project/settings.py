"""
Django settings for gffdisc_project project.

Generated by 'django-admin startproject' using Django 5.2.6.

For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# Quick-start development settings - unsuitable for production
# See https://docs.djangoproject.com/en/5.2/howto/deployment/checklist/

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = config('SECRET_KEY', default='django-insecure-gffdisc-desk-runs-only-3k9v!q2w')

# SECURITY WARNING: don't run with debug turned on in production!
DEBUG = config('DEBUG', default=True, cast=bool)

ALLOWED_HOSTS = config('ALLOWED_HOSTS', default='localhost,127.0.0.1').split(',')


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',

    # Third-party apps
    'rest_framework',

    # Project apps
    'gffdisc',  # Lattice GFF, level-set percolation and disconnection experiments
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'gffdisc_project.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'gffdisc_project.wsgi.application'


# Database
# https://docs.djangoproject.com/en/5.2/ref/settings/#databases
# Only the experiment run registry lives here; sqlite is enough for desk runs,
# set DB_ENGINE=django.db.backends.postgresql to share a registry.

DB_ENGINE = config('DB_ENGINE', default='django.db.backends.sqlite3')

if DB_ENGINE.endswith('sqlite3'):
    DATABASES = {
        'default': {
            'ENGINE': DB_ENGINE,
            'NAME': config('DB_NAME', default=str(BASE_DIR / 'db.sqlite3')),
        }
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': DB_ENGINE,
            'NAME': config('DB_NAME', default='gffdisc'),
            'USER': config('DB_USER', default='postgres'),
            'PASSWORD': config('DB_PASSWORD', default='postgres'),
            'HOST': config('DB_HOST', default='localhost'),
            'PORT': config('DB_PORT', default='5432'),
        }
    }


# Password validation
# https://docs.djangoproject.com/en/5.2/ref/settings/#auth-password-validators

AUTH_PASSWORD_VALIDATORS = [
    {
        'NAME': 'django.contrib.auth.password_validation.UserAttributeSimilarityValidator',
    },
    {
        'NAME': 'django.contrib.auth.password_validation.MinimumLengthValidator',
    },
]


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# Static files (admin only)
STATIC_URL = '/static/'
STATIC_ROOT = BASE_DIR / 'staticfiles'

# Default primary key field type
# https://docs.djangoproject.com/en/5.2/ref/settings/#default-auto-field

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# REST Framework settings (serializers validate experiment configs)
REST_FRAMEWORK = {
    'DEFAULT_PERMISSION_CLASSES': [
        'rest_framework.permissions.IsAuthenticatedOrReadOnly',
    ],
}


# =============================================================================
# GFFDISC NUMERICS
# =============================================================================

GFFDISC_DEFAULT_DIMENSION = config('GFFDISC_DEFAULT_DIMENSION', default=3, cast=int)

# Largest window sampled by dense Cholesky of the Green matrix
GFFDISC_DENSE_LIMIT = config('GFFDISC_DENSE_LIMIT', default=4096, cast=int)

# Largest joint boundary set the Z-field sampler factorizes densely
GFFDISC_BOUNDARY_DENSE_LIMIT = config('GFFDISC_BOUNDARY_DENSE_LIMIT', default=16384, cast=int)

# Direct factorization up to this many unknowns, conjugate gradients above
GFFDISC_DIRECT_SOLVE_LIMIT = config('GFFDISC_DIRECT_SOLVE_LIMIT', default=5000, cast=int)
GFFDISC_SOLVER_TOLERANCE = config('GFFDISC_SOLVER_TOLERANCE', default=1e-10, cast=float)

# Largest grid a Dirichlet or capacity solve may allocate
GFFDISC_MAX_GRID_SITES = config('GFFDISC_MAX_GRID_SITES', default=8_000_000, cast=int)

GFFDISC_GREEN_TABLE_MAX_RADIUS = config('GFFDISC_GREEN_TABLE_MAX_RADIUS', default=40, cast=int)
GFFDISC_GREEN_TABLE_DIR = Path(config('GFFDISC_GREEN_TABLE_DIR', default=str(BASE_DIR / 'var' / 'green_tables')))

GFFDISC_OUTPUT_DIR = Path(config('GFFDISC_OUTPUT_DIR', default=str(BASE_DIR / 'var' / 'reports')))
GFFDISC_WORKERS = config('GFFDISC_WORKERS', default=1, cast=int)
GFFDISC_MC_CHUNK = config('GFFDISC_MC_CHUNK', default=64, cast=int)

GFFDISC_LOG_LEVEL = config('GFFDISC_LOG_LEVEL', default='INFO')


# Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'gffdisc': {
            'handlers': ['console'],
            'level': GFFDISC_LOG_LEVEL,
            'propagate': False,
        },
    },
}
