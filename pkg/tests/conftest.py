import time

import pytest


@pytest.fixture(scope="session")
def reproduced(tmp_path_factory):
    """The three reference experiments with both kernels, run through the CLI
    stages with their default settings. Keyed by ``(example, kernel)``."""
    from cmkernel import cli, greedy, io, regression

    root = tmp_path_factory.mktemp("reproduce")
    out = {}
    for example, ref in cli.REFERENCE.items():
        ds = root / f"ex{example}.csv"
        start = time.perf_counter()
        data = cli.stage_simulate(ref["system"], ds, 0.0, 1000.0, 0.1, 0.8, 0.1)
        seconds = time.perf_counter() - start
        for kernel in ("k1", "k2"):
            sizes, selections = {}, {}
            for mode in ("p", "p2"):
                path = root / f"ex{example}_{kernel}_{mode}.json"
                sel = cli.stage_greedy(ds, path, kernel, ref["eps"], mode)
                sizes[sel.tol_mode], selections[sel.tol_mode] = len(sel), sel
            sel_path = root / f"ex{example}_{kernel}_p2.json"
            model_path = root / f"ex{example}_{kernel}_model.json"
            sur = cli.stage_fit(ds, sel_path, model_path, 1e-10, regression.DIAG_JITTER)
            out[example, kernel] = {
                "system": ref["system"],
                "dataset_path": ds,
                "dataset": data,
                "simulate_seconds": seconds,
                "sizes": sizes,
                "selections": selections,
                "reported_size": ref["sizes"][kernel],
                "selection_path": sel_path,
                "eps": ref["eps"],
                "surrogate": io.read_model(model_path),
                "fitted": sur,
                "default_mode": greedy.POWER_SQUARED,
            }
    return out
