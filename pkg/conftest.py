import os

import django

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "tests.test_project.settings")
django.setup()
