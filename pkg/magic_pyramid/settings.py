from pathlib import Path
from dotenv import load_dotenv
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent
load_dotenv(BASE_DIR / '.env')

SECRET_KEY = os.getenv('SECRET_KEY', 'magic-pyramid-local-only-key')
DEBUG = os.getenv('DEBUG', 'True') == 'True'

ALLOWED_HOSTS = os.getenv('ALLOWED_HOSTS', '*').split(',')


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'rest_framework',
    'django_filters',
    'mp',
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

ROOT_URLCONF = 'magic_pyramid.urls'

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

WSGI_APPLICATION = 'magic_pyramid.wsgi.application'


# Database
# The run registry lives here; engine commands accept --no-record to skip it.

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.getenv('MP_DATABASE', BASE_DIR / 'db.sqlite3'),
    }
}


LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

STATIC_URL = 'static/'
STATIC_ROOT = os.path.join(BASE_DIR, 'staticfiles')

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# REST framework: the registry API is read-only
REST_FRAMEWORK = {
    'DEFAULT_PERMISSION_CLASSES': [
        'rest_framework.permissions.AllowAny',
    ],
    'DEFAULT_FILTER_BACKENDS': [
        'django_filters.rest_framework.DjangoFilterBackend',
    ],
    'DEFAULT_PAGINATION_CLASS': 'rest_framework.pagination.PageNumberPagination',
    'PAGE_SIZE': 50,
}


# Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s [%(levelname)s] %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'mp': {
            'handlers': ['console'],
            'level': os.getenv('MP_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Engine defaults. Run configs override these per key; MP_* variables override them here.
MAGIC_PYRAMID = {
    'LEARNING_RATE': float(os.getenv('MP_LEARNING_RATE', '2e-5')),
    'BATCH_SIZE': int(os.getenv('MP_BATCH_SIZE', '64')),
    'DELTA_FINAL': float(os.getenv('MP_DELTA_FINAL', '0.04')),
    'TEMPERATURE': float(os.getenv('MP_TEMPERATURE', '1e-5')),
    'L1_WEIGHT': float(os.getenv('MP_L1_WEIGHT', '0.01')),
    'TAU_GRID': [float(t) for t in os.getenv('MP_TAU_GRID', '0.1,0.5,0.8').split(',')],
    'SEED': int(os.getenv('MP_SEED', '0')),
    'SUB_WIDTH_RATIO': float(os.getenv('MP_SUB_WIDTH_RATIO', '0.5')),
    'ATTENTION_SCALE': os.getenv('MP_ATTENTION_SCALE', 'head'),
    'OUTPUT_DIR': os.getenv('MP_OUTPUT_DIR', str(BASE_DIR / 'runs')),
    'BENCH_WORKERS': int(os.getenv('MP_BENCH_WORKERS', '1')),
}
