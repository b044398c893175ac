import json
import threading
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from mupm.data import InputPair, harden, one_hot
from mupm.errors import (
    DimensionMismatch,
    DuplicateKey,
    HttpFailure,
    InconsistentK,
    InvalidSpec,
    NonFiniteOutput,
    ReplayMiss,
    UnsupportedKind,
)
from mupm.models import (
    ManifestEntry,
    ModelSpec,
    ReplayAdapter,
    SyntheticAdapter,
    build_adapter,
    export_manifest,
    import_outputs,
    load_manifest,
    manifest_entries,
    write_outputs,
)
from mupm.perturb import PerturbationSpec


def reference_forward(spec: ModelSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Test-local reference implementation, written independently."""
    z = spec.weights_image.dot(x) + spec.weights_text.dot(y) + spec.bias
    if spec.kind == "synthetic-linear":
        return z
    if spec.kind == "synthetic-softmax":
        z = z.astype(float).copy()
        z[0] = z[0] + spec.interaction * float(np.sum(x)) * float(np.sum(y))
    else:
        z = np.tanh(spec.gain * z)
    e = np.exp(z - np.max(z))
    return e / e.sum()


@pytest.mark.parametrize("fixture", ["linear_model", "softmax_model", "saturating_model"])
def test_forward_matches_reference(fixture, request):
    spec = request.getfixturevalue(fixture)
    adapter = SyntheticAdapter(spec)
    gen = np.random.Generator(np.random.PCG64(0))
    for _ in range(25):
        x = gen.normal(size=2)
        y = gen.normal(size=2)
        pair = InputPair(sample_id="r", image=x, text=(1, 2))
        got = adapter.forward(x[None, :], y[None, :])[0]
        want = reference_forward(spec, x, y)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)
        if spec.kind != "synthetic-linear":
            assert got.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(got > 0)
        out = adapter.evaluate(
            InputPair(sample_id="r", image=x, text=tuple(abs(int(t)) for t in (1, 2)))
        )
        assert out.k == spec.k


@pytest.mark.parametrize("fixture", ["linear_model", "softmax_model", "saturating_model"])
def test_true_derivatives_match_finite_differences(fixture, request):
    spec = request.getfixturevalue(fixture)
    adapter = SyntheticAdapter(spec)
    pair = InputPair(sample_id="d", image=np.array([0.3, -0.7]), text=(2, 5))
    j_img, j_txt = adapter.true_derivatives(pair)
    assert j_img.shape == (spec.k, 2)
    assert j_txt.shape == (spec.k, 2)
    h = 1e-6
    x = np.asarray(pair.image, dtype=float)
    y = np.asarray(pair.text, dtype=float)
    for j in range(2):
        dx = np.zeros(2)
        dx[j] = h
        fd = (adapter.continuous_forward(x + dx, y) - adapter.continuous_forward(x - dx, y)) / (2 * h)
        np.testing.assert_allclose(j_img[:, j], fd, atol=1e-6)
        fd = (adapter.continuous_forward(x, y + dx) - adapter.continuous_forward(x, y - dx)) / (2 * h)
        np.testing.assert_allclose(j_txt[:, j], fd, atol=1e-6)


def test_batch_agrees_with_single(linear_model):
    adapter = SyntheticAdapter(linear_model)
    images = [np.array([0.1, 0.2]), np.array([-1.0, 0.5])]
    texts = [(3, 4), (0, 7)]
    batch = adapter.evaluate_batch(images, texts)
    for i in range(2):
        pair = InputPair(sample_id=f"b{i}", image=images[i], text=texts[i])
        np.testing.assert_array_equal(batch[i], adapter.evaluate(pair).values)


def test_dimension_mismatch(linear_model):
    adapter = SyntheticAdapter(linear_model)
    with pytest.raises(DimensionMismatch):
        adapter.evaluate(InputPair(sample_id="x", image=np.zeros(3), text=(1, 2)))
    with pytest.raises(DimensionMismatch):
        adapter.evaluate(InputPair(sample_id="x", image=np.zeros(2), text=(1,)))


def test_non_finite_output_detected():
    spec = ModelSpec(
        kind="synthetic-linear",
        weights_image=[[1e308, 1e308]],
        weights_text=[[1e308, 1e308]],
        bias=[0.0],
    )
    adapter = SyntheticAdapter(spec)
    pair = InputPair(sample_id="inf", image=np.array([1e3, 1e3]), text=(9, 9))
    with np.errstate(over="ignore"), pytest.raises(NonFiniteOutput):
        adapter.evaluate(pair)


def test_spec_validation():
    with pytest.raises(InvalidSpec):
        ModelSpec(kind="mystery").validate()
    with pytest.raises(InvalidSpec):
        ModelSpec(kind="synthetic-linear", weights_image=[[1.0]]).validate()
    with pytest.raises(InvalidSpec):
        ModelSpec(
            kind="synthetic-linear",
            weights_image=[[1.0, 0.0]],
            weights_text=[[1.0], [2.0]],
            bias=[0.0],
        ).validate()
    with pytest.raises(InvalidSpec):
        ModelSpec(kind="replay").validate()
    with pytest.raises(InvalidSpec):
        ModelSpec(kind="http").validate()


def test_model_spec_json_round_trip(softmax_model):
    clone = ModelSpec.from_jsonable(softmax_model.to_jsonable())
    np.testing.assert_array_equal(clone.weights_image, softmax_model.weights_image)
    np.testing.assert_array_equal(clone.weights_text, softmax_model.weights_text)
    assert clone.interaction == softmax_model.interaction


def test_one_hot_and_harden():
    np.testing.assert_array_equal(one_hot(2, 4), [0.0, 0.0, 1.0, 0.0])
    np.testing.assert_array_equal(harden(np.array([0.2, 0.5, 0.5])), [0.0, 1.0, 0.0])


# -- manifest export / replay -----------------------------------------------------

def _small_dataset() -> list[InputPair]:
    return [
        InputPair(sample_id="a", image=np.array([0.5, -0.5]), text=(5, 9)),
        InputPair(sample_id="b", image=np.array([1.0, 0.0]), text=(9, 5)),
    ]


def test_manifest_round_trip(tmp_path, basic_pspec):
    entries = manifest_entries(_small_dataset(), basic_pspec, global_seed=3, n_resamples=4)
    assert len(entries) == 2 * 3 * 4
    path = str(tmp_path / "manifest.jsonl")
    export_manifest(entries, path)
    loaded = load_manifest(path)
    assert len(loaded) == len(entries)
    for before, after in zip(entries, loaded):
        assert before.key() == after.key()
        np.testing.assert_array_equal(before.image, after.image)
        assert before.text == after.text


def test_manifest_duplicate_key_rejected(tmp_path):
    entry = ManifestEntry("a", "joint", 0, np.zeros(2), (1,))
    with pytest.raises(DuplicateKey):
        export_manifest([entry, entry], str(tmp_path / "m.jsonl"))


def test_replay_matches_direct_evaluation(tmp_path, linear_model, basic_pspec):
    dataset = _small_dataset()
    adapter = SyntheticAdapter(linear_model)
    entries = manifest_entries(dataset, basic_pspec, global_seed=8, n_resamples=3)
    records = []
    for entry in entries:
        pair = InputPair(sample_id=entry.sample_id, image=entry.image, text=entry.text)
        records.append((entry.sample_id, entry.branch, entry.replicate, adapter.evaluate(pair).values))
    out_path = str(tmp_path / "outputs.jsonl")
    write_outputs(records, out_path)
    table, k = import_outputs(out_path)
    assert k == linear_model.k
    replay = ReplayAdapter(table, k)
    for entry in entries:
        pair = InputPair(sample_id=entry.sample_id, image=entry.image, text=entry.text)
        direct = adapter.evaluate(pair).values
        served = replay.evaluate(pair, branch=entry.branch, replicate=entry.replicate).values
        np.testing.assert_array_equal(direct, served)
    with pytest.raises(ReplayMiss):
        replay.evaluate(dataset[0], branch="joint", replicate=99)
    with pytest.raises(ReplayMiss):
        replay.evaluate(dataset[0])
    with pytest.raises(UnsupportedKind):
        replay.true_derivatives(dataset[0])


def test_import_outputs_rejects_inconsistent_k(tmp_path):
    path = str(tmp_path / "bad.jsonl")
    write_outputs(
        [("a", "joint", 0, np.array([1.0, 2.0])), ("a", "joint", 1, np.array([1.0]))], path
    )
    with pytest.raises(InconsistentK):
        import_outputs(path)


# -- http adapter ------------------------------------------------------------------

class _ModelHandler(BaseHTTPRequestHandler):
    fail_next = 0
    reject = False
    spec: ModelSpec | None = None

    def do_POST(self):
        cls = _ModelHandler
        if cls.reject:
            self.send_error(422)
            return
        if cls.fail_next > 0:
            cls.fail_next -= 1
            self.send_error(503)
            return
        length = int(self.headers["Content-Length"])
        obj = json.loads(self.rfile.read(length))
        x = np.asarray(obj["image"], dtype=float)
        y = np.asarray(obj["text"], dtype=float)
        out = reference_forward(cls.spec, x, y)
        body = json.dumps({"output": out.tolist()}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server(linear_model):
    _ModelHandler.spec = linear_model
    _ModelHandler.fail_next = 0
    _ModelHandler.reject = False
    server = ThreadingHTTPServer(("127.0.0.1", 0), _ModelHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
    server.server_close()


def test_http_adapter_evaluates_and_retries(http_server, linear_model, sample_pair):
    spec = ModelSpec(kind="http", base_url=http_server, retries=3, backoff_s=0.01, timeout_s=5.0)
    adapter = build_adapter(spec)
    want = SyntheticAdapter(linear_model).evaluate(sample_pair).values
    got = adapter.evaluate(sample_pair).values
    np.testing.assert_allclose(got, want, rtol=1e-12)
    assert adapter.k == linear_model.k

    _ModelHandler.fail_next = 2  # transient 503s consume two of the retries
    got = adapter.evaluate(sample_pair).values
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_http_adapter_gives_up_after_retries(http_server, sample_pair):
    spec = ModelSpec(kind="http", base_url=http_server, retries=1, backoff_s=0.01, timeout_s=5.0)
    adapter = build_adapter(spec)
    _ModelHandler.fail_next = 10
    with pytest.raises(HttpFailure):
        adapter.evaluate(sample_pair)


def test_http_adapter_client_error_is_not_retried(http_server, sample_pair):
    spec = ModelSpec(kind="http", base_url=http_server, retries=5, backoff_s=0.01, timeout_s=5.0)
    adapter = build_adapter(spec)
    _ModelHandler.reject = True
    with pytest.raises(HttpFailure):
        adapter.evaluate(sample_pair)
    assert _ModelHandler.fail_next == 0  # 4xx fails fast, retry budget untouched


def test_http_adapter_unreachable_host(sample_pair):
    spec = ModelSpec(
        kind="http", base_url="http://127.0.0.1:1", retries=0, backoff_s=0.01, timeout_s=0.5
    )
    adapter = build_adapter(spec)
    with pytest.raises(HttpFailure):
        adapter.evaluate(sample_pair)
