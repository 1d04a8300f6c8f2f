"""
Django settings for the trajmbm test suite.

The package has no models or views; Django only provides the management command
runner and the test runner.
"""

import logging
import os
import sys

BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = "dummy"

DEBUG = True

ALLOWED_HOSTS = []

INSTALLED_APPS = ["trajmbm"]

if len(sys.argv) > 1 and sys.argv[1] == "test":
    logging.disable(logging.CRITICAL)

MIDDLEWARE = []

DATABASES = {}

TIME_ZONE = "UTC"

USE_TZ = True
