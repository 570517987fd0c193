import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "voxnox.settings")
django.setup()
