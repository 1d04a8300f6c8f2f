import os
import sys
from typing import List, Optional

import django
from django.conf import settings
from django.core.management import ManagementUtility

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {"plain": {"format": "%(asctime)s %(levelname)s %(name)s %(message)s"}},
    "handlers": {"console": {"class": "logging.StreamHandler", "formatter": "plain"}},
    "loggers": {
        "trajmbm": {
            "handlers": ["console"],
            "level": os.environ.get("TRAJMBM_LOG_LEVEL", "INFO"),
        }
    },
}


def configure():
    """Minimal settings so the management command runs without a Django project."""
    if not settings.configured:
        settings.configure(INSTALLED_APPS=["trajmbm"], DATABASES={}, LOGGING=LOGGING)
    django.setup()


def main(argv: Optional[List[str]] = None):
    argv = sys.argv[1:] if argv is None else argv
    configure()
    ManagementUtility(["trajmbm", "run_experiment", *argv]).execute()


if __name__ == "__main__":
    main()
