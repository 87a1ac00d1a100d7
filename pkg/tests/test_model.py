import numpy as np
import pytest

from conftest import random_params
from hemppcat.baselines import kplanes
from hemppcat.model import (
    Dataset,
    Hyper,
    InvalidParamsError,
    ModelFormatError,
    ModelParams,
    MppcaParams,
    dumps_model,
    load_dataset,
    load_model,
    loads_model,
    save_dataset,
    save_model,
    validate_params,
)


def test_validate_identity_case():
    params = ModelParams(np.zeros((1, 2, 1)), np.zeros((1, 2)), [1.0], [1.0])
    validate_params(params, Hyper(d=2, k=1, J=1, L=1))


def test_validate_rejects_non_simplex():
    params = ModelParams(np.zeros((2, 2, 1)), np.zeros((2, 2)), [1.0], [0.5, 0.6])
    with pytest.raises(InvalidParamsError, match="sum"):
        validate_params(params, Hyper(d=2, k=1, J=2, L=1))


def test_validate_rejects_negative_variance():
    params = ModelParams(np.zeros((1, 2, 1)), np.zeros((1, 2)), [-1.0], [1.0])
    with pytest.raises(InvalidParamsError, match="negative"):
        validate_params(params, Hyper(d=2, k=1, J=1, L=1))


@pytest.mark.parametrize(
    "F_shape, mu_shape, v, pi",
    [
        ((1, 3, 1), (1, 2), [1.0], [1.0]),
        ((1, 2, 1), (1, 3), [1.0], [1.0]),
        ((1, 2, 1), (1, 2), [1.0, 1.0], [1.0]),
        ((1, 2, 1), (1, 2), [1e-12], [1.0]),
    ],
)
def test_validate_rejects_bad_shapes_and_floor(F_shape, mu_shape, v, pi):
    params = ModelParams(np.zeros(F_shape), np.zeros(mu_shape), v, pi)
    with pytest.raises(InvalidParamsError):
        validate_params(params, Hyper(d=2, k=1, J=1, L=1))


def test_hyper_invariants():
    with pytest.raises(InvalidParamsError):
        Hyper(d=3, k=3, J=1)
    with pytest.raises(InvalidParamsError):
        Hyper(d=3, k=1, J=0)


def test_params_are_immutable(rng):
    params = random_params(rng, 4, 2, 2, 2)
    with pytest.raises(ValueError):
        params.F[0, 0, 0] = 1.0


def test_model_round_trip_is_bitwise(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "m.txt"
    for _ in range(100):
        d = int(rng.integers(2, 9))
        k = int(rng.integers(1, d))
        J, L = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        params = random_params(rng, d, k, J, L)
        params = ModelParams(params.F * 10.0 ** rng.uniform(-8, 8), params.mu, params.v, params.pi)
        pi = params.pi / params.pi.sum()
        params = ModelParams(params.F, params.mu, params.v, pi)
        hyper = Hyper(d=d, k=k, J=J, L=L)
        save_model(params, hyper, path)
        loaded, h2 = load_model(path)
        assert h2 == hyper
        for name in ("F", "mu", "v", "pi"):
            a, b = getattr(params, name), getattr(loaded, name)
            assert a.tobytes() == b.tobytes()


def test_mppca_and_kplanes_round_trip(rng):
    mp = MppcaParams(rng.standard_normal((2, 5, 2)), rng.standard_normal((2, 5)), [0.5, 2.0], [0.25, 0.75])
    loaded, hyper = loads_model(dumps_model(mp))
    assert isinstance(loaded, MppcaParams)
    assert loaded.v.tobytes() == mp.v.tobytes()
    assert hyper == Hyper(d=5, k=2, J=2, L=1)

    X = rng.standard_normal((40, 5))
    state = kplanes(X, 2, 2, iters=5, seed=3)
    loaded, _ = loads_model(dumps_model(state))
    assert loaded.bases.tobytes() == state.bases.tobytes()
    assert np.array_equal(loaded.counts, state.counts)


def test_load_rejects_k_not_below_d(rng):
    text = dumps_model(random_params(rng, 3, 2, 1, 1))
    text = text.replace("\nk 2\n", "\nk 3\n")
    with pytest.raises(ModelFormatError, match="header"):
        loads_model(text)


def test_load_rejects_truncated_file(rng):
    text = dumps_model(random_params(rng, 4, 2, 2, 2))
    lines = text.splitlines()
    for cut in (3, len(lines) // 2, len(lines) - 1):
        with pytest.raises(ModelFormatError):
            loads_model("\n".join(lines[:cut]) + "\n")


def test_load_rejects_schema_mismatch(rng):
    text = dumps_model(random_params(rng, 4, 2, 2, 2)).replace("schema_version 1", "schema_version 2")
    with pytest.raises(ModelFormatError, match="schema"):
        loads_model(text)


def test_load_revalidates_invariants(rng):
    params = random_params(rng, 4, 2, 2, 1)
    text = dumps_model(params)
    bad = text.replace("\nv\n" + repr(float(params.v[0])), "\nv\n-1.0")
    with pytest.raises(InvalidParamsError):
        loads_model(bad)


def test_model_file_layout(rng):
    params = ModelParams(np.arange(6.0).reshape(1, 3, 2), [[0.5, 1.5, 2.5]], [0.25], [1.0])
    lines = dumps_model(params).splitlines()
    assert lines[:8] == [
        "hemppcat-model", "schema_version 1", "kind hemppcat",
        "d 3", "k 2", "J 1", "L 1", "end-header",
    ]
    f_start = lines.index("F 1") + 1
    # column-major: first column (0, 2, 4), then (1, 3, 5)
    assert [float(x) for x in lines[f_start : f_start + 6]] == [0, 2, 4, 1, 3, 5]
    assert lines[-1] == "end"


def test_dataset_csv_round_trip(tmp_path, rng):
    ds = Dataset(rng.standard_normal((7, 3)), [0, 1, 1, 0, 2, 2, 1], [1, 0, 0, 1, 1, 0, 0])
    path = tmp_path / "d.csv"
    save_dataset(ds, path)
    header = path.read_text().splitlines()[0]
    assert header == "x1,x2,x3,group,label"
    back = load_dataset(path)
    assert back.samples.tobytes() == ds.samples.tobytes()
    assert np.array_equal(back.groups, ds.groups)
    assert np.array_equal(back.labels, ds.labels)


def test_dataset_requires_every_group(rng):
    with pytest.raises(ValueError, match="without samples"):
        Dataset(rng.standard_normal((3, 2)), [0, 2, 2])
    with pytest.raises(ValueError):
        Dataset(rng.standard_normal((3, 2)), [0, 1, 1], n_groups=1)


def test_dataset_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("")
    with pytest.raises(ModelFormatError):
        load_dataset(p)
    p.write_text("x1,x2\n1,2\n")
    with pytest.raises(ModelFormatError, match="group"):
        load_dataset(p)
    p.write_text("x1,x2,group\n1,oops,1\n")
    with pytest.raises(ModelFormatError):
        load_dataset(p)
