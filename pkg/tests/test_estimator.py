import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from layerbind.estimator import LayerBindGenerator
from layerbind.errors import ValidationError
from conftest import THREE_LAYER_DOC

SMALL = dict(num_blocks=3, d_model=16, heads=2, grid_h=8, grid_w=8, steps=6)


def test_params_round_trip():
    est = LayerBindGenerator(**SMALL, beta=0.5)
    params = est.get_params()
    assert params["beta"] == 0.5 and params["num_blocks"] == 3
    other = clone(est).set_params(beta=0.2)
    assert other.beta == 0.2 and est.beta == 0.5


def test_not_fitted():
    with pytest.raises(NotFittedError):
        LayerBindGenerator().predict()


def test_fit_predict(rng):
    est = LayerBindGenerator(**SMALL, vital_counts=(1, 1)).fit(THREE_LAYER_DOC)
    assert est.vital_blocks_[0] == 0 and len(est.vital_blocks_) == 3
    assert [p.vital for p in est.profiles_] == [True, True, True]
    out = est.predict()
    assert out.shape == (64, 16)
    np.testing.assert_array_equal(out, est.predict())


def test_explicit_and_preset_vital():
    est = LayerBindGenerator(**SMALL, vital_blocks=[2, 0]).fit(THREE_LAYER_DOC)
    assert est.vital_blocks_ == [0, 2] and est.profiles_ is None
    deep = dict(SMALL, num_blocks=57, d_model=8)
    assert LayerBindGenerator(**deep, vital_blocks="sd35").fit(THREE_LAYER_DOC).vital_blocks_[-1] == 34


def test_generate_other_scene_and_trace():
    from layerbind.model import Trace

    est = LayerBindGenerator(**SMALL, vital_blocks=[0]).fit(THREE_LAYER_DOC)
    doc = dict(THREE_LAYER_DOC, elements=THREE_LAYER_DOC["elements"][:1])
    trace = Trace()
    traj = est.generate(doc, trace=trace)
    assert sorted(traj.alphas) == [1]
    assert trace.counts["hard_binding"] == 1


def test_fit_is_lenient_on_invalid_scene():
    bad = dict(THREE_LAYER_DOC, elements=[{"region_prompt": "x", "layout": [10, 10, 5, 5], "order": 1}])
    est = LayerBindGenerator(**SMALL, vital_blocks=[0])
    est.fit(bad)
    assert not est.validation_report_.ok
    with pytest.raises(ValidationError):
        from layerbind.estimator import check_scene

        check_scene(bad, strict=True)
