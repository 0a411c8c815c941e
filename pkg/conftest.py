import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'mintime.settings')
django.setup()
