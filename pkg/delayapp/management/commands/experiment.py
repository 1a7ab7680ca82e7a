import sys

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from delayapp.config import load_config
from delayapp.exceptions import DelayToolkitError
from delayapp.experiments import RUNNERS, run

FINDING_EXIT = 2


class Command(BaseCommand):
    help = 'Run one delay-toolkit experiment from a TOML config; exits 2 when it records a finding.'

    def add_arguments(self, parser):
        parser.add_argument('subcommand', choices=sorted(RUNNERS))
        parser.add_argument('--config', required=True, help='Path to the TOML config')
        parser.add_argument('--seed', type=int)
        parser.add_argument('--paths', type=int)
        parser.add_argument('--steps', type=int)
        parser.add_argument('--t0', type=float)
        parser.add_argument('--T', type=float, dest='T')
        parser.add_argument('--delta', type=float)
        parser.add_argument('--out', help='Directory for report.json and the CSV tables')
        parser.add_argument('--record', action='store_true',
                            help='Store the run in the local database')

    def handle(self, *args, **options):
        overrides = {key: options[key] for key in ('seed', 'paths', 'steps', 't0', 'T', 'delta')}
        try:
            config = load_config(options['config'], overrides=overrides)
            report = run(options['subcommand'], config, out=options['out'],
                         record=options['record'])
        except ValidationError as exc:
            details = '; '.join(f'{field}: {" ".join(messages)}'
                                for field, messages in exc.message_dict.items())
            raise CommandError(f'invalid config: {details}')
        except (DelayToolkitError, ValueError, OSError) as exc:
            raise CommandError(str(exc))

        for name, passed in report.verdicts.items():
            self.stdout.write(f'{name}: {"pass" if passed else "FINDING"}')
        if report.passed:
            self.stdout.write(self.style.SUCCESS(f'{report.subcommand}: pass'))
            return
        self.stdout.write(self.style.WARNING(f'{report.subcommand}: finding'))
        sys.exit(FINDING_EXIT)
