from dataclasses import asdict
from pathlib import Path

from django.conf import settings

from forecasting.management.base import ForecastCommand
from forecasting.registry import record_training
from forecasting.services.artifacts import SUMMARY_FILE, provenance, write_history, write_horizon_metrics, write_json
from forecasting.services.checkpoint import read_meta, save_checkpoint
from forecasting.services.run_config import (
    build_run_config, env_layer, flags_layer, load_run_config, merge_documents, restore_run,
)
from forecasting.services.trainer import adapter_finetune, evaluate


class Command(ForecastCommand):
    help = "Fine-tune a trained checkpoint on new data with LoRA-AMR adapters (base weights frozen)"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--checkpoint', required=True, help='Pretrained checkpoint')
        parser.add_argument('--config', help='Run config naming the new dataset and the adapter section')
        parser.add_argument('--rank', type=int, help='Override adapter.rank')
        parser.add_argument('--train-heads', action='store_true', help='Also train the forecasting head')
        parser.add_argument('--epochs', type=int, help='Override adapter.epochs')
        parser.add_argument('--out', help='Output directory')
        parser.add_argument('--no-record', action='store_true')

    def run(self, **options):
        overrides = {
            'train.seed': options.get('seed'),
            'adapter.rank': options.get('rank'),
            'adapter.epochs': options.get('epochs'),
            'adapter.train_heads': True if options['train_heads'] else None,
            'output.record': False if options['no_record'] else None,
        }
        checkpoint = Path(options['checkpoint'])
        if options.get('config'):
            config = load_run_config(options['config'], overrides)
        else:
            document = merge_documents(read_meta(checkpoint)['run_config'], env_layer())
            config = build_run_config(merge_documents(document, flags_layer(overrides)))
        model, _, data, _ = restore_run(checkpoint, config)
        # the architecture always comes from the checkpoint
        config.model = model.config

        before = evaluate(model, data.windows['val'], data.standardizer, data.tokens['val'], split='val')
        tcfg = config.train_config()
        result = adapter_finetune(model, data, tcfg)
        after = evaluate(model, data.windows['val'], data.standardizer, data.tokens['val'], split='val')
        test = evaluate(model, data.windows['test'], data.standardizer, data.tokens['test'])

        # never write over the pretrained run
        out_dir = Path(options.get('out') or checkpoint.parent / 'finetune')
        save_checkpoint(
            Path(out_dir) / settings.FORECASTING['CHECKPOINT_NAME'], model, data.standardizer,
            run_config=config.to_dict(), seed_bank=result.train.seed_bank, adapter_config=config.adapter,
            extra={'pretrained': str(checkpoint), 'best_epoch': result.train.best_epoch},
        )
        write_history(out_dir, result.train.history)
        write_horizon_metrics(out_dir, test.horizons)

        val_before, val_after = before.metrics['mae@avg'], after.metrics['mae@avg']
        summary = {
            **provenance(config.config_hash()),
            'command': 'finetune',
            'pretrained': str(checkpoint),
            'adapter': asdict(config.adapter),
            'wrapped_layers': result.wrapped,
            'adapter_trainable': result.adapter_trainable,
            'trainable': result.trainable,
            'total': result.total,
            'trainable_fraction': result.trainable_fraction,
            'frozen_fingerprint': result.fingerprint,
            'val_mae_before': val_before,
            'val_mae_after': val_after,
            'val_improvement': (val_before - val_after) / val_before if val_before else None,
            'best_epoch': result.train.best_epoch,
            'test': test.to_document(),
        }
        write_json(out_dir / SUMMARY_FILE, summary)

        self.stdout.write(f"trainable {result.trainable} of {result.total} parameters "
                          f"({100.0 * result.trainable_fraction:.2f}%), adapter C entries {result.adapter_trainable}")
        self.stdout.write(f"val mae@avg {val_before:.4f} -> {val_after:.4f}")
        record_training('finetune', config, out_dir, result.train.best_epoch, test.metrics,
                        enabled=config.output.record)
        self.success(f"Fine-tuned {len(result.wrapped)} layers; outputs in {out_dir}")

