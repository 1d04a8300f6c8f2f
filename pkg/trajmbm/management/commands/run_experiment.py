import logging
from time import monotonic

from django.core.management.base import BaseCommand, CommandError

from trajmbm.config import PRESETS, apply_overrides, load_run_config, parse_window, preset
from trajmbm.results import SUMMARY_FILE, emit_results
from trajmbm.simulation import run_monte_carlo

logger = logging.getLogger(__name__)


def _window(value: str):
    try:
        return parse_window(value)
    except ValueError as e:
        raise CommandError(str(e), returncode=2)


class Command(BaseCommand):
    help = "Run a Monte Carlo experiment of the trajectory PMBM filter and write its result files"

    def add_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--config", metavar="PATH", help="JSON run configuration")
        source.add_argument("--preset", choices=sorted(PRESETS), help="Built-in run configuration")
        parser.add_argument("--trials", type=int, help="Number of Monte Carlo trials")
        parser.add_argument("--seed", type=int, help="Master seed")
        parser.add_argument("--nscan", type=int, help="N-scan pruning depth")
        parser.add_argument("--window", help="Retained trajectory steps: 'full' or an integer")
        parser.add_argument("--out", metavar="DIR", help="Output directory")
        parser.add_argument(
            "--debug-dual", action="store_true", default=None, help="Write convergence.csv"
        )
        parser.add_argument(
            "--record-timing",
            action="store_true",
            default=None,
            help="Fill mean_trial_seconds in summary.csv",
        )

    def handle(self, *args, **options):
        start_time = monotonic()
        try:
            config = load_run_config(options["config"]) if options["config"] else preset(options["preset"])
            config = apply_overrides(
                config,
                trials=options["trials"],
                seed=options["seed"],
                n_scan=options["nscan"],
                window=None if options["window"] is None else _window(options["window"]),
                output_dir=options["out"],
                debug_dual=options["debug_dual"],
                record_timing=options["record_timing"],
            )
            report = run_monte_carlo(
                config.scenario,
                config.filter,
                config.trials,
                seed=config.effective_seed,
                name=config.name,
                debug_dual=config.debug_dual,
            )
            emit_results(
                report,
                config.output_dir,
                record_timing=config.record_timing,
                debug_dual=config.debug_dual,
            )
        except FileNotFoundError as e:
            raise CommandError(str(e), returncode=2)
        except ValueError as e:
            raise CommandError(str(e), returncode=1)

        logger.info(
            "Finished experiment",
            extra=dict(name=config.name, trials=config.trials, duration=monotonic() - start_time),
        )
        self.stdout.write(f"Wrote results to {config.output_dir}/{SUMMARY_FILE} and companions")
