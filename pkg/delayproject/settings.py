"""
Django settings for delayproject project.

Generated by 'django-admin startproject' using Django 6.0.1 and trimmed to
what the delay toolkit needs: one app, a local database for run records and
the toolkit's numeric defaults.

For more information on this file, see
https://docs.djangoproject.com/en/6.0/topics/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get(
    'DJANGO_SECRET_KEY',
    'django-insecure-delay-toolkit-local-only',
)

DEBUG = os.environ.get('DJANGO_DEBUG', '0') == '1'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'delayapp.apps.DelayappConfig',
]


# Database
# https://docs.djangoproject.com/en/6.0/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Internationalization
# https://docs.djangoproject.com/en/6.0/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True


# Logging
# https://docs.djangoproject.com/en/6.0/topics/logging/

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'delayapp': {
            'handlers': ['console'],
            'level': os.environ.get('DELAY_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Delay toolkit numerics

DELAY_TOOLKIT = {
    'REGRESSION_DEGREE': 3,
    'RIDGE': 1e-8,
    'MAX_CONDITION': 1e12,
    'PATH_BLOCK': 4096,
    'FD_STEP': 1e-4,
    'STAT_SIGMAS': 3.0,
    'ACCEPT_SIGMAS': 5.0,
    'SKOROKHOD_CORRECTION': True,
    'STRICT_DELAY_INDICATOR': True,
    'WINDOW_READING': 'moving-window',
    'LQ_DENOMINATOR': 'windowed',
}
