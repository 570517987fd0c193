"""
Django settings for the voxnox project.

Only management commands and the test runner use these settings; there is no
HTTP surface, database or template layer.

Process-level knobs come from the environment (or a .env file) through
python-decouple. Experiment hyperparameters live in the run config JSON, see
evolution.serializers.ExperimentConfigSerializer.
"""

import os
from decouple import config

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Django refuses to start without one; nothing here is signed.
SECRET_KEY = config('SECRET_KEY', default='voxnox-development-key')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'rest_framework',
    'evolution',
]

MIDDLEWARE = []

DATABASES = {}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.AutoField'


# Logging configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'standard': {
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(process)d - %(thread)d - %(message)s'
        },
        'simple': {
            'format': '%(name)s %(levelname)s %(message)s'
        },
    },
    'handlers': {
        'console': {
            'level': config('LOG_LEVEL', default='INFO'),
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'evolution': {
            'handlers': ['console'],
            'level': 'DEBUG',
            'propagate': False,
        },
    },
}

# Format used for the per-run log.txt written next to the checkpoints
RUN_LOG_FORMAT = LOGGING['formatters']['standard']['format']


# Evolution engine
VOXNOX_THREADS = config('VOXNOX_THREADS', default=1, cast=int)

# Desk-scale acceptance checks take minutes to hours
VOXNOX_SLOW_TESTS = config('VOXNOX_SLOW_TESTS', default=False, cast=bool)
