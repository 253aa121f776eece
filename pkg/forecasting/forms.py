"""
Forms for run-configuration validation

Each section of a run-config document (dataset, model, train, adapter,
text_provider, output) is bound to one of these forms. Only keys present in
the document are returned, so dataclass defaults fill in the rest.
"""

from django import forms
from django.core.exceptions import ValidationError

from .services.dataset import DATASET_CATALOG
from .services.gq_mha import HEAD_WIDTHS
from .services.model import ABLATIONS, VARIANTS
from .services.synthetic import GENERATORS
from .services.text_embed import PROVIDER_KINDS


def _choices(values):
    return [(v, v) for v in values]


class SectionForm(forms.Form):
    """Base form: rejects keys it does not declare and returns only the keys given"""

    section = ''

    def __init__(self, data=None, *args, **kwargs):
        self.raw = dict(data or {})
        super().__init__(self.raw, *args, **kwargs)

    def unknown_keys(self):
        return sorted(set(self.raw) - set(self.fields))

    def values(self):
        """Cleaned values for the keys present in the document"""
        return {key: self.cleaned_data[key] for key in self.raw if key in self.fields}


class DatasetSectionForm(SectionForm):
    section = 'dataset'

    name = forms.CharField(required=False, max_length=64)
    path = forms.CharField(required=False)
    manifest = forms.CharField(required=False)
    synthetic = forms.ChoiceField(required=False, choices=_choices([''] + sorted(GENERATORS)))
    n_steps = forms.IntegerField(required=False, min_value=1)
    granularity = forms.CharField(required=False, max_length=16)
    split = forms.JSONField(required=False)

    def clean_split(self):
        split = self.cleaned_data['split']
        if split is None:
            return None
        if not isinstance(split, (list, tuple)) or len(split) != 3:
            raise ValidationError('Split must be a list of three fractions. (F002)', code='invalid_split')
        try:
            return tuple(float(f) for f in split)
        except (TypeError, ValueError):
            raise ValidationError('Split fractions must be numbers. (F002)', code='invalid_split')

    def clean(self):
        cleaned = super().clean()
        sources = [key for key in ('path', 'manifest', 'synthetic') if cleaned.get(key)]
        if len(sources) > 1:
            raise ValidationError(f'Give only one of path, manifest, synthetic; got {", ".join(sources)}. (F002)',
                                  code='ambiguous_source')
        name = cleaned.get('name')
        if name and name in DATASET_CATALOG and cleaned.get('synthetic'):
            raise ValidationError(f'{name} is a benchmark name, not a synthetic dataset. (F002)', code='bad_name')
        return cleaned


class ModelSectionForm(SectionForm):
    section = 'model'

    window = forms.IntegerField(required=False, min_value=1)
    horizon = forms.IntegerField(required=False, min_value=1)
    d = forms.IntegerField(required=False, min_value=1)
    pool_size = forms.IntegerField(required=False, min_value=1)
    top_k = forms.IntegerField(required=False, min_value=1)
    groups = forms.IntegerField(required=False, min_value=1)
    heads = forms.IntegerField(required=False, min_value=1)
    d_k = forms.IntegerField(required=False, min_value=1)
    fusion_heads = forms.IntegerField(required=False, min_value=1)
    depth = forms.IntegerField(required=False, min_value=1)
    head_width = forms.ChoiceField(required=False, choices=_choices(HEAD_WIDTHS))
    residual = forms.BooleanField(required=False)
    layer_norm = forms.BooleanField(required=False)
    d_t = forms.IntegerField(required=False, min_value=1)
    sigma2_floor = forms.FloatField(required=False, min_value=0.0)
    variant = forms.ChoiceField(required=False, choices=_choices(VARIANTS))
    ablations = forms.JSONField(required=False)

    def clean_ablations(self):
        ablations = self.cleaned_data['ablations']
        if ablations is None:
            return ()
        if isinstance(ablations, str):
            ablations = [ablations]
        unknown = [a for a in ablations if a not in ABLATIONS]
        if unknown:
            raise ValidationError(
                f'Unknown ablation(s) {", ".join(map(str, unknown))}; valid names are {", ".join(ABLATIONS)}. (F002)',
                code='unknown_ablation'
            )
        return tuple(ablations)


class TrainSectionForm(SectionForm):
    section = 'train'

    epochs = forms.IntegerField(required=False, min_value=1)
    batch = forms.IntegerField(required=False, min_value=1)
    lr = forms.FloatField(required=False)
    weight_decay = forms.FloatField(required=False, min_value=0.0)
    plateau_patience = forms.IntegerField(required=False, min_value=1)
    plateau_factor = forms.FloatField(required=False)
    early_stop_patience = forms.IntegerField(required=False, min_value=1)
    seed = forms.IntegerField(required=False, min_value=0)
    runs = forms.IntegerField(required=False, min_value=1)

    def clean_lr(self):
        lr = self.cleaned_data['lr']
        if lr is not None and lr <= 0:
            raise ValidationError('Learning rate must be positive. (F002)', code='invalid_lr')
        return lr

    def clean_plateau_factor(self):
        factor = self.cleaned_data['plateau_factor']
        if factor is not None and not 0.0 < factor < 1.0:
            raise ValidationError('Plateau factor must be between 0 and 1. (F002)', code='invalid_factor')
        return factor


class AdapterSectionForm(SectionForm):
    section = 'adapter'

    rank = forms.IntegerField(required=False, min_value=2)
    alpha = forms.FloatField(required=False)
    dropout = forms.FloatField(required=False, min_value=0.0, max_value=0.99)
    lr = forms.FloatField(required=False)
    weight_decay = forms.FloatField(required=False, min_value=0.0)
    epochs = forms.IntegerField(required=False, min_value=1)
    batch = forms.IntegerField(required=False, min_value=1)
    targets = forms.JSONField(required=False)
    train_heads = forms.BooleanField(required=False)
    quantize_base = forms.BooleanField(required=False)
    bits = forms.IntegerField(required=False, min_value=2, max_value=8)

    def clean_rank(self):
        rank = self.cleaned_data['rank']
        if rank is not None and rank % 2:
            raise ValidationError(f'Adapter rank must be even, got {rank}. (F002)', code='odd_rank')
        return rank

    def clean_targets(self):
        targets = self.cleaned_data['targets']
        if targets is None:
            return None
        if not isinstance(targets, list) or not all(isinstance(t, str) for t in targets):
            raise ValidationError('Adapter targets must be a list of layer-name patterns. (F002)',
                                  code='invalid_targets')
        return tuple(targets)

    def values(self):
        values = super().values()
        if values.get('targets') is None:
            values.pop('targets', None)
        return values


class TextProviderSectionForm(SectionForm):
    section = 'text_provider'

    kind = forms.ChoiceField(required=False, choices=_choices(PROVIDER_KINDS))
    d_t = forms.IntegerField(required=False, min_value=1)
    tokens = forms.IntegerField(required=False, min_value=1)
    seed = forms.IntegerField(required=False, min_value=0)
    fixture = forms.CharField(required=False)
    endpoint = forms.URLField(required=False)
    model = forms.CharField(required=False)
    max_tokens = forms.IntegerField(required=False, min_value=1)
    timeout = forms.FloatField(required=False, min_value=0.1)
    retries = forms.IntegerField(required=False, min_value=0)
    fallback = forms.BooleanField(required=False)
    workers = forms.IntegerField(required=False, min_value=1)
    template = forms.CharField(required=False, strip=False)


class OutputSectionForm(SectionForm):
    section = 'output'

    dir = forms.CharField(required=False)
    record = forms.BooleanField(required=False)


SECTION_FORMS = {
    form.section: form
    for form in (DatasetSectionForm, ModelSectionForm, TrainSectionForm, AdapterSectionForm,
                 TextProviderSectionForm, OutputSectionForm)
}
