"""The backend executable against the pipeline's job-file protocol."""

import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from dermapipe.imageops import load_mask as pipeline_load_mask
from dermapipe.imageops import resize_mask_nearest
from dermapipe.retrieval import PromptPair, PromptSet
from dermapipe.segmentation import CommandBackend, SegmentationJob
from dermapipe_export.backend import run_backend_job
from dermapipe_export.errors import JobFileError

BACKEND_CMD = [sys.executable, "-m", "dermapipe_export.cli", "backend"]


def _write_image(path, h, w, seed):
    rng = np.random.default_rng(seed)
    Image.fromarray(rng.integers(0, 256, (h, w, 3), dtype=np.uint8)).save(path)


def _write_mask(path, h, w, box):
    y0, y1, x0, x1 = box
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[y0:y1, x0:x1] = 255
    Image.fromarray(mask, mode="L").save(path)
    return (mask >= 128).astype(np.uint8)


def _job(tmp_path, query, prompts, out_name="out.png", size=(448, 448)):
    job = {"image": str(query), "size": list(size),
           "prompts": [{"image": str(i), "mask": str(m)} for i, m in prompts],
           "out_mask": str(tmp_path / out_name)}
    job_path = tmp_path / "job.json"
    job_path.write_text(json.dumps(job))
    return job_path


def test_self_consistency_probe(tmp_path):
    # prompting with the query image itself must reproduce its own mask
    _write_image(tmp_path / "q.png", 300, 260, seed=1)
    truth = _write_mask(tmp_path / "m.png", 300, 260, (60, 220, 40, 200))
    job = _job(tmp_path, tmp_path / "q.png",
               [(tmp_path / "q.png", tmp_path / "m.png")])
    out = run_backend_job(job)
    got = pipeline_load_mask(out)
    assert got.shape == (448, 448)
    assert set(np.unique(got)) <= {0, 1}
    want = resize_mask_nearest(truth, 448, 448)
    inter = np.logical_and(got, want).sum()
    union = np.logical_or(got, want).sum()
    assert inter / union >= 0.9  # the probe; patch matching gives 1.0 here


def test_two_prompt_pool_prefers_the_matching_prompt(tmp_path):
    _write_image(tmp_path / "a.png", 256, 256, seed=2)
    _write_image(tmp_path / "b.png", 256, 256, seed=3)
    mask_a = _write_mask(tmp_path / "ma.png", 256, 256, (0, 128, 0, 256))
    _write_mask(tmp_path / "mb.png", 256, 256, (128, 256, 0, 256))
    job = _job(tmp_path, tmp_path / "a.png",
               [(tmp_path / "b.png", tmp_path / "mb.png"),
                (tmp_path / "a.png", tmp_path / "ma.png")])
    got = pipeline_load_mask(run_backend_job(job))
    want = resize_mask_nearest(mask_a, 448, 448)
    assert np.array_equal(got, want)  # exact: a's own patches win every tie


def test_through_pipeline_command_backend(tmp_path):
    _write_image(tmp_path / "q.png", 200, 200, seed=4)
    _write_image(tmp_path / "p.png", 200, 200, seed=5)
    _write_mask(tmp_path / "pm.png", 200, 200, (50, 150, 50, 150))
    backend = CommandBackend(BACKEND_CMD)
    assert backend.backend_id.startswith("cmd-")
    job = SegmentationJob(
        image_path=str(tmp_path / "q.png"),
        prompts=PromptSet(k=1, pairs=(
            PromptPair(record_id="p", image_path=str(tmp_path / "p.png"),
                       mask_path=str(tmp_path / "pm.png"), distance=1.0),)),
        out_mask_path=str(tmp_path / "out.png"))
    backend.run(job)  # raises BackendFailure on any protocol violation
    got = pipeline_load_mask(tmp_path / "out.png")
    assert got.shape == (448, 448)
    assert set(np.unique(got)) <= {0, 1}


def test_missing_prompt_mask_exits_nonzero_naming_path(tmp_path):
    _write_image(tmp_path / "q.png", 64, 64, seed=6)
    job = _job(tmp_path, tmp_path / "q.png",
               [(tmp_path / "q.png", tmp_path / "ghost.png")])
    proc = subprocess.run(BACKEND_CMD + [str(job)], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "ghost.png" in proc.stderr
    assert not (tmp_path / "out.png").exists()


def test_malformed_job_files(tmp_path):
    with pytest.raises(JobFileError, match="not found"):
        run_backend_job(tmp_path / "nope.json")

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(JobFileError, match="unreadable"):
        run_backend_job(bad)

    incomplete = tmp_path / "incomplete.json"
    incomplete.write_text(json.dumps({"image": "x.png", "size": [448, 448]}))
    with pytest.raises(JobFileError, match="prompts"):
        run_backend_job(incomplete)

    _write_image(tmp_path / "q.png", 32, 32, seed=7)
    no_prompts = _job(tmp_path, tmp_path / "q.png", [])
    with pytest.raises(JobFileError, match="at least one prompt"):
        run_backend_job(no_prompts)

    weird_size = tmp_path / "weird.json"
    weird_size.write_text(json.dumps({
        "image": str(tmp_path / "q.png"), "size": [448],
        "prompts": [{"image": "a", "mask": "b"}], "out_mask": "o.png"}))
    with pytest.raises(JobFileError, match="size"):
        run_backend_job(weird_size)


def test_backend_cli_exit_zero_and_idempotent(tmp_path):
    _write_image(tmp_path / "q.png", 96, 96, seed=8)
    _write_mask(tmp_path / "m.png", 96, 96, (20, 70, 20, 70))
    job = _job(tmp_path, tmp_path / "q.png",
               [(tmp_path / "q.png", tmp_path / "m.png")])
    first = subprocess.run(BACKEND_CMD + [str(job)], capture_output=True, text=True)
    assert first.returncode == 0, first.stderr
    bytes_one = (tmp_path / "out.png").read_bytes()
    second = subprocess.run(BACKEND_CMD + [str(job)], capture_output=True, text=True)
    assert second.returncode == 0
    assert (tmp_path / "out.png").read_bytes() == bytes_one


def test_nonstandard_size_truncates_to_patch_grid(tmp_path):
    _write_image(tmp_path / "q.png", 100, 80, seed=9)
    _write_mask(tmp_path / "m.png", 100, 80, (10, 60, 10, 60))
    job = _job(tmp_path, tmp_path / "q.png",
               [(tmp_path / "q.png", tmp_path / "m.png")], size=(100, 72))
    got = pipeline_load_mask(run_backend_job(job))
    assert got.shape == (96, 64)  # rounded down to whole 16px patches
