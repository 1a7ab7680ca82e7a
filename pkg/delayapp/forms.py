import numpy as np
from django import forms
from django.core.exceptions import ValidationError

from .exceptions import InvalidHorizon, NonCommensurateDelay
from .grid import make_grid
from .kernels import FORMS, READINGS
from .models import SUBCOMMANDS
from .system import MAXIMIZE, MINIMIZE

ORIENTATIONS = [(MAXIMIZE, 'Maximize'), (MINIMIZE, 'Minimize')]
CONTROL_KINDS = [('zero', 'Zero'), ('constant', 'Constant'), ('linear', 'Linear in t'),
                 ('cosine', 'Cosine')]


class MatrixField(forms.Field):
    """A number or a nested list of numbers, cleaned to a float array of rank <= 2."""

    def to_python(self, value):
        if value in self.empty_values:
            return None
        try:
            array = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise ValidationError('Enter a number or a list of numbers', code='invalid')
        if array.ndim > 2:
            raise ValidationError('At most a matrix is accepted here', code='rank')
        if not np.all(np.isfinite(array)):
            raise ValidationError('Entries must be finite', code='finite')
        return array

    def clean(self, value):
        # arrays do not compare against empty_values
        value = self.to_python(value)
        if value is None and self.required:
            raise ValidationError(self.error_messages['required'], code='required')
        return value


class ExperimentConfigForm(forms.Form):
    subcommand = forms.ChoiceField(choices=SUBCOMMANDS, required=False)
    t0 = forms.FloatField(required=False)
    T = forms.FloatField(error_messages={'required': 'The horizon T is mandatory'})
    steps = forms.IntegerField(min_value=1)
    delta = forms.FloatField(min_value=0.0)
    paths = forms.IntegerField(
        min_value=1,
        error_messages={'min_value': 'The number of paths must be at least 1'},
    )
    seed = forms.IntegerField(min_value=0)
    degree = forms.IntegerField(min_value=0, max_value=6, required=False)

    def clean(self):
        super().clean()
        t0 = self.cleaned_data.get('t0') or 0.0
        self.cleaned_data['t0'] = t0
        T = self.cleaned_data.get('T')
        steps = self.cleaned_data.get('steps')
        delta = self.cleaned_data.get('delta')
        if T is None or steps is None or delta is None:
            return self.cleaned_data
        if delta > T - t0:
            self.add_error('delta', 'The delay must not exceed the horizon T - t0')
            return self.cleaned_data
        try:
            self.cleaned_data['grid'] = make_grid(t0, T, steps, delta)
        except InvalidHorizon as exc:
            self.add_error('T', str(exc))
        except NonCommensurateDelay as exc:
            self.add_error('delta', str(exc))
        return self.cleaned_data


class SystemForm(forms.Form):
    state_dim = forms.IntegerField(min_value=1, required=False)
    control_dim = forms.IntegerField(min_value=1, required=False)
    orientation = forms.ChoiceField(choices=ORIENTATIONS, required=False)
    lipschitz = forms.FloatField(min_value=0.0, required=False)
    xi = MatrixField(required=False)

    def clean(self):
        super().clean()
        self.cleaned_data['state_dim'] = self.cleaned_data.get('state_dim') or 1
        self.cleaned_data['control_dim'] = self.cleaned_data.get('control_dim') or 1
        self.cleaned_data['orientation'] = self.cleaned_data.get('orientation') or MAXIMIZE
        xi = self.cleaned_data.get('xi')
        if xi is not None and xi.ndim > 1:
            self.add_error('xi', 'The initial path is a constant vector')
        return self.cleaned_data


class CoefficientForm(forms.Form):
    x = MatrixField(required=False)
    y = MatrixField(required=False)
    z = MatrixField(required=False)
    kappa = MatrixField(required=False)
    u = MatrixField(required=False)
    mu = MatrixField(required=False)
    nu = MatrixField(required=False)
    lam = MatrixField(required=False)
    const = MatrixField(required=False)
    quadratic_x = MatrixField(required=False)


class KernelForm(forms.Form):
    form = forms.ChoiceField(choices=[(f, f) for f in FORMS if f != 'tabulated'])
    c = MatrixField(required=False)
    decay = forms.FloatField(required=False)
    window = forms.FloatField(min_value=0.0, required=False)
    reading = forms.ChoiceField(choices=[(r, r) for r in READINGS], required=False)

    def clean(self):
        super().clean()
        form = self.cleaned_data.get('form')
        if form in ('constant', 'exponential') and self.cleaned_data.get('c') is None:
            self.add_error('c', 'This kernel form needs its coefficient c')
        if form == 'exponential' and self.cleaned_data.get('decay') is None:
            self.add_error('decay', 'An exponential kernel needs its rate lambda')
        if form == 'windowed' and self.cleaned_data.get('window') is None:
            self.add_error('window', 'A windowed kernel needs its window length')
        c = self.cleaned_data.get('c')
        if c is not None and c.ndim == 2 and c.shape[0] != c.shape[1]:
            self.add_error('c', 'The kernel coefficient must be square')
        return self.cleaned_data


class ControlForm(forms.Form):
    kind = forms.ChoiceField(choices=CONTROL_KINDS, required=False)
    value = MatrixField(required=False)
    slope = forms.FloatField(required=False)
    amplitude = forms.FloatField(required=False)
    frequency = forms.FloatField(required=False)
    initial = MatrixField(required=False)
    lower = forms.FloatField(required=False)
    upper = forms.FloatField(required=False)

    def clean(self):
        super().clean()
        self.cleaned_data['kind'] = self.cleaned_data.get('kind') or 'zero'
        lower = self.cleaned_data.get('lower')
        upper = self.cleaned_data.get('upper')
        if lower is not None and upper is not None and upper < lower:
            self.add_error('upper', 'The upper bound must not be below the lower bound')
        value = self.cleaned_data.get('value')
        if value is not None and value.ndim > 1:
            self.add_error('value', 'A control value is a scalar or a vector')
        return self.cleaned_data


class LqForm(forms.Form):
    f = forms.FloatField(required=False)
    g = forms.FloatField(required=False)
    h = forms.FloatField(required=False)
    k = forms.FloatField(required=False)
    abar = forms.FloatField(required=False)
    bbar = forms.FloatField(required=False)
    cbar = forms.FloatField(required=False)
    dbar = forms.FloatField(required=False)
    fbar = forms.FloatField(required=False)
    gbar = forms.FloatField(required=False)
    hbar = forms.FloatField(required=False)
    kbar = forms.FloatField(required=False)
    r1 = forms.FloatField(min_value=0.0, required=False)
    r2 = forms.FloatField(min_value=0.0, required=False)
    xi = forms.FloatField(required=False)
    varsigma = forms.FloatField(required=False)

    def clean(self):
        super().clean()
        for name in self.fields:
            if self.cleaned_data.get(name) is None and name not in self.errors:
                self.cleaned_data[name] = 1.0 if name == 'r1' else 0.0
        r1 = self.cleaned_data.get('r1')
        if r1 is not None and r1 <= 0 and 'r1' not in self.errors:
            self.add_error('r1', 'r1 must be positive, the closed form divides by it near T')
        return self.cleaned_data
