import pytest

from dynavsr.cli import main
from dynavsr.data import write_synthetic_dataset

TINY = [
    "data.patch_size=32", "data.kernel_size=5",
    "model.vsr_channels=4", "model.mfdn_channels=4",
    "pretrain_vsr.steps=3", "pretrain_vsr.batch=2",
    "pretrain_mfdn.steps=3", "pretrain_mfdn.batch=2",
    "meta.alpha=1e-3", "meta.beta=1e-3", "meta.total_iters=4", "meta.meta_batch=2",
    "meta.checkpoint_every=2", "meta.beta_milestones=[3]",
    "eval.max_sequences=2", "eval.profile_height=32", "eval.profile_width=32", "eval.profile_frames=3",
]


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    write_synthetic_dataset(root / "train", 4, seed=1, frames=7, size=40, prefix="train")
    write_synthetic_dataset(root / "val", 2, seed=2, frames=6, size=32, prefix="val")
    return root


def tiny_args(data_root, out_dir, *extra):
    args = ["--override", f"data.train_root={data_root / 'train'}",
            "--override", f"data.val_root={data_root / 'val'}",
            "--override", f"out_dir={out_dir}"]
    for item in TINY + list(extra):
        args += ["--override", item]
    return args


@pytest.fixture(scope="session")
def tiny_run(tiny_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    args = tiny_args(tiny_data, out)
    for cmd in ("pretrain-vsr", "pretrain-mfdn", "meta-train"):
        assert main([cmd, *args]) == 0
    return out, args


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
