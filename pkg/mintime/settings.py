from pathlib import Path
import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('PARABOLIC_SECRET_KEY', 'mintime-batch-toolkit-not-served')

DEBUG = os.getenv('PARABOLIC_DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'rest_framework',
    'parabolic.apps.ParabolicConfig',
]

# Batch toolkit: no models, no database.
DATABASES = {}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Process-level knobs only. Every numerical parameter of a run lives in its
# config file so that the manifest captures the whole experiment.
PARABOLIC = {
    'VERSION': '0.4.0',
    'OUTPUT_ROOT': Path(os.getenv('PARABOLIC_OUTPUT_ROOT', BASE_DIR / 'runs')),
    'SWEEP_WORKERS': int(os.getenv('PARABOLIC_SWEEP_WORKERS', 4)),
}

LOG_LEVEL = os.getenv('PARABOLIC_LOG_LEVEL', 'INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'parabolic': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}
