from forecasting.management.base import ForecastCommand
from forecasting.services.lora_amr import memory_report


class Command(ForecastCommand):
    help = "Parameter and activation-memory comparison of full fine-tuning, LoRA and LoRA-AMR for one d x d layer"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--d', type=int, default=4096, help='Layer width')
        parser.add_argument('--r', type=int, default=16, help='Adapter rank (even)')
        parser.add_argument('--batch', type=int, default=1)
        parser.add_argument('--tokens', type=int, default=1)
        parser.add_argument('--table', action='store_true', help='Print a per-method table instead of key: value lines')

    def run(self, **options):
        report = memory_report(options['d'], options['r'], options['batch'], options['tokens'])

        if not options['table']:
            for key, value in report.to_document().items():
                self.stdout.write(f"{key}: {value:g}" if isinstance(value, float) else f"{key}: {value}")
            return

        self.stdout.write(f"{'method':<10} {'trainable':>14} {'frozen':>14} {'activations':>14}")
        for method, counts in report.entries.items():
            self.stdout.write(f"{method:<10} {counts['trainable_params']:>14} {counts['frozen_params']:>14} "
                              f"{counts['stored_activation_elems']:>14}")
        self.stdout.write(f"full/LoRA parameter ratio: {report.ratio_full_to_lora:g}")
        self.stdout.write(f"full/LoRA-AMR parameter ratio: {report.ratio_full_to_amr:g}")
        self.stdout.write(f"activation width ratio d:(r/2): {report.activation_ratio:g}")
        self.stdout.write(f"init: {report.init_note}")
