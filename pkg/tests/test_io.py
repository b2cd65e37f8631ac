import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meaad import io
from meaad.detector import DetectorModel, Hyperparams, init_params, mlp_forward
from meaad.embedding import ExpertIndex, QuerySample
from meaad.errors import DataError, FormatError
from meaad.features import featurize
from meaad.scenario import ScenarioConfig, generate_scenario

from conftest import random_unit

finite = st.floats(allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=1, max_size=20))
def test_float_text_round_trip_is_exact(values):
    back = io.parse_floats(io.fmt_floats(values))
    assert back.tobytes() == np.asarray(values, dtype=np.float64).tobytes()


def test_gallery_round_trip(tmp_path, rng):
    idx = ExpertIndex(2, rng.permutation(50), rng.integers(0, 5, 50), random_unit(rng, 50, 7))
    io.write_gallery(tmp_path / "g.emb", idx)
    back = io.read_gallery(tmp_path / "g.emb")
    assert back.expert_id == 2
    for a, b in ((idx.item_ids, back.item_ids), (idx.identity_ids, back.identity_ids), (idx.embeddings, back.embeddings)):
        assert a.tobytes() == b.tobytes()
    assert (tmp_path / "g.emb").read_text().startswith("MEAAD-EMB v1 dim=7 expert=2\n")


def test_query_round_trip(tmp_path, rng):
    qs = [QuerySample(i, random_unit(rng, 3, 5), i % 4, "adversarial" if i % 2 else "benign") for i in range(10)]
    io.write_queries(tmp_path / "q.qry", qs)
    back = io.read_queries(tmp_path / "q.qry")
    assert [(q.query_id, q.identity_id, q.label) for q in back] == [(q.query_id, q.identity_id, q.label) for q in qs]
    assert all(a.embeddings.tobytes() == b.embeddings.tobytes() for a, b in zip(qs, back))


def test_feature_round_trip(tmp_path):
    indexes, queries = generate_scenario(ScenarioConfig(8, 10, 3, 6, queries_per_identity=2, seed=4))
    fb = featurize(queries, indexes, 5)
    io.write_features(tmp_path / "f.feat", 3, 5, fb.query_ids, fb.labels, fb.matrix)
    n, k, qids, labels, matrix = io.read_features(tmp_path / "f.feat")
    assert (n, k) == (3, 5)
    assert matrix.tobytes() == fb.matrix.tobytes()
    assert list(qids) == list(fb.query_ids) and list(labels) == list(fb.labels)
    assert (tmp_path / "f.feat").read_text().startswith("MEAAD-FEAT v1 n=3 k=5 d=60\n")


def test_model_round_trip_forward_is_bitwise(tmp_path, rng):
    w, b = init_params((12, 9, 5, 1), rng)
    b = [rng.normal(size=v.shape) for v in b]
    m = DetectorModel(w, b, Hyperparams(seed=3, hidden=(9, 5)), 2, 2, ("qs", "ce"))
    io.write_model(tmp_path / "m.txt", m)
    back = io.read_model(tmp_path / "m.txt")
    x = rng.uniform(-1, 1, (100, 12))
    assert mlp_forward(back, x).tobytes() == mlp_forward(m, x).tobytes()
    assert (back.n_experts, back.support_size, back.feature_blocks) == (2, 2, ("qs", "ce"))
    assert back.hyperparams == m.hyperparams


@pytest.mark.parametrize("kind,writer", [
    ("EMB", lambda p, rng: io.write_gallery(p, ExpertIndex(0, [0, 1], [0, 0], random_unit(rng, 2, 3)))),
    ("QRY", lambda p, rng: io.write_queries(p, [QuerySample(0, random_unit(rng, 2, 3))])),
    ("FEAT", lambda p, rng: io.write_features(p, 2, 1, [0], [1], np.zeros((1, 4)))),
    ("MODEL", lambda p, rng: io.write_model(p, DetectorModel(*init_params((3, 1), rng)))),
])
def test_unknown_version_rejected(tmp_path, rng, kind, writer):
    path = tmp_path / "f"
    writer(path, rng)
    text = path.read_text()
    assert text.startswith(f"MEAAD-{kind} v1")
    path.write_text(text.replace(f"MEAAD-{kind} v1", f"MEAAD-{kind} v2", 1))
    reader = {"EMB": io.read_gallery, "QRY": io.read_queries, "FEAT": io.read_features, "MODEL": io.read_model}[kind]
    with pytest.raises(FormatError):
        reader(path)


def test_malformed_files(tmp_path):
    p = tmp_path / "g.emb"
    p.write_text("MEAAD-EMB v1 dim=3 expert=0\n0\t0\t1.0,0.0\n")
    with pytest.raises(FormatError):
        io.read_gallery(p)
    p.write_text("MEAAD-FEAT v1 n=4 k=15 d=541\n")
    with pytest.raises(FormatError):
        io.read_features(p)
    with pytest.raises(DataError):
        io.read_gallery(tmp_path / "missing.emb")
    with pytest.raises(DataError):
        io.write_features(p, 2, 2, [0], [0], np.zeros((1, 5)))
