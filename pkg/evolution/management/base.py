from django.core.management.base import BaseCommand, CommandError

from ..errors import ConfigError, Error
from ..voxel_core import LatticeError
import logging
import traceback

logger = logging.getLogger(__name__)

# exit status for invalid configuration or arguments
USAGE_ERROR = 2


class EvolutionCommand(BaseCommand):
    """
    Runs `execute_command` and turns engine errors into CommandError:
    exit 2 for invalid configuration or input files, 1 for everything else
    """

    def execute_command(self, **options):
        raise NotImplementedError

    def handle(self, *args, **options):
        name = self.__class__.__module__.rsplit('.', 1)[-1]
        try:
            logger.info('<Command: {} options={}>'.format(name, {k: v for k, v in options.items()
                                                                 if k not in ('stdout', 'stderr')}))
            self.execute_command(**options)

        except (ConfigError, LatticeError) as e:
            logger.error(traceback.format_exc())
            raise CommandError(self.describe(e), returncode=USAGE_ERROR)

        except Error as e:
            logger.error(traceback.format_exc())
            raise CommandError(e.message, returncode=1)

        logger.info('Command {} finished'.format(name))

    @staticmethod
    def describe(error):
        field = getattr(error, 'field', None)
        if field:
            return '{} (field: {})'.format(error.message, field)
        return error.message
