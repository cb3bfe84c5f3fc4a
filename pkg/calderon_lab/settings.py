"""
Django settings for the calderon_lab project.

The project has no web surface: Django provides the settings layer,
the management commands that drive experiments, the run ledger
database and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

from pathlib import Path
import os
from dotenv import load_dotenv

# Load .env file
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: the key only signs nothing here, but Django requires one
SECRET_KEY = os.getenv('SECRET_KEY', 'django-insecure-calderon-lab-local-only')

DEBUG = os.getenv('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'rest_framework',
    'core',
    'geometry',
    'conductivity',
    'pde',
    'dtn',
    'skernel',
    'analysis',
]

MIDDLEWARE = []


# Database (run ledger)
# https://docs.djangoproject.com/en/4.2/ref/settings/#databases

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': Path(os.getenv('LAB_DATABASE', BASE_DIR / 'lab.sqlite3')),
    }
}


# Internationalization

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True


# Default primary key field type

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Logging

LAB_LOG_LEVEL = os.getenv('LAB_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name}: {message}',
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
        name: {
            'handlers': ['console'],
            'level': LAB_LOG_LEVEL,
            'propagate': False,
        }
        for name in ['calderon_lab', 'core', 'geometry', 'conductivity',
                     'pde', 'dtn', 'skernel', 'analysis']
    },
}


# Solver Configuration
SOLVER_TOL = float(os.getenv('SOLVER_TOL', '1e-12'))
SOLVER_MAX_ITER = int(os.getenv('SOLVER_MAX_ITER', '5000'))
SOLVER_DIRECT_LIMIT = int(os.getenv('SOLVER_DIRECT_LIMIT', '200000'))  # unknowns

# DtN Configuration
DTN_MAX_DOFS = int(os.getenv('DTN_MAX_DOFS', '2000'))

# Experiment Configuration
LAB_OUTPUT_DIR = Path(os.getenv('LAB_OUTPUT_DIR', BASE_DIR / 'runs'))
LAB_DEFAULT_SEED = int(os.getenv('LAB_DEFAULT_SEED', '20240607'))
LAB_CONFIG_DIR = BASE_DIR / 'config'  # bundled configs, addressable by name
LAB_RECORD_RUNS = os.getenv('LAB_RECORD_RUNS', 'True') == 'True'
