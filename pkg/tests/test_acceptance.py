"""Acceptance gate: one timed check per core guarantee of the package.

Each test prints a PASS line with its wall time; every check compares the
package against an independent reference implementation or a hand-derived
fixture at a fixed tolerance.
"""

from __future__ import annotations

import time

import numpy as np

from conftest import CountingGeneration, CountingRecognition, build_dataset
from oracles import (brute_force_map, brute_force_pairs, naive_affine,
                     naive_slerp, scan_threshold, sqrtm_frechet)

from morphbench.adapters import (AdapterStore, AdapterWeightMap,
                                 FineTuneConfig, fine_tune, load_adapter,
                                 merge_adapters, save_adapter)
from morphbench.corpus import (LayoutDescriptor, Manifest, MorphPair,
                               SubjectRecord, ingest, select_pairs)
from morphbench.genpipeline import (VARIANTS, RunManifest, build_request,
                                    finetune_config_for_variant, run_batch)
from morphbench.identity import IdentityStore, extract_identity, slerp
from morphbench.metrics import (ComparisonScoreSet, MatedScore, NonMatedScore,
                                calibrate_threshold, calibrate_thresholds,
                                compute_map, format_cell, frechet_distance,
                                sample_mean_std)
from morphbench.metrics.quality import QualityReport


def finish(label: str, started: float, budget: float) -> None:
    elapsed = time.perf_counter() - started
    assert elapsed < budget, f"{label}: {elapsed:.2f}s exceeded {budget}s"
    print(f"PASS {label} ({elapsed:.2f}s)")


def test_criterion_1_spherical_interpolation_matches_reference():
    started = time.perf_counter()
    rng = np.random.default_rng(101)
    checked = 0
    while checked < 1000:
        d = int(rng.integers(2, 65))
        a, b = rng.normal(size=d), rng.normal(size=d)
        cos = abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
        if cos > 1.0 - 1e-6:  # reference formula is undefined when parallel
            continue
        lam = float(rng.uniform())
        got = slerp(a, b, lam)
        ref = np.asarray(naive_slerp(list(map(float, a)),
                                     list(map(float, b)), lam))
        assert np.max(np.abs(got - ref)) <= 1e-10
        checked += 1
    finish("criterion-1 spherical interpolation vs scalar reference "
           "(1000 pairs, dim<=64, 1e-10)", started, 5.0)


def test_criterion_2_adapter_merge_and_archive_round_trip(tmp_path):
    started = time.perf_counter()
    rng = np.random.default_rng(202)
    for trial in range(200):
        keys = [f"layer{k}.w" for k in range(int(rng.integers(1, 5)))]
        shapes = {k: tuple(int(s) for s in rng.integers(1, 6, size=2))
                  for k in keys}
        e1 = {k: rng.normal(size=shapes[k]) for k in keys}
        e2 = {k: rng.normal(size=shapes[k]) for k in keys}
        alpha = float(rng.choice([0.0, 1.0, rng.uniform()]))
        merged = merge_adapters(AdapterWeightMap("s1", e1),
                                AdapterWeightMap("s2", e2), alpha)
        for k in keys:
            ref = naive_affine([float(x) for x in e1[k].ravel()],
                               [float(x) for x in e2[k].ravel()], alpha)
            assert np.max(np.abs(merged.entries[k].ravel()
                                 - np.asarray(ref))) <= 1e-12

    for dtype in (np.float32, np.float64):
        entries = {f"k{i}": rng.normal(size=(3, 4)).astype(dtype)
                   for i in range(4)}
        original = AdapterWeightMap("s1", entries, {"note": "check"})
        path = tmp_path / f"{np.dtype(dtype).name}.adapter"
        save_adapter(original, path)
        loaded = load_adapter(path)
        for key, arr in original.entries.items():
            got = loaded.entries[key]
            assert got.dtype == arr.dtype and got.shape == arr.shape
            assert got.tobytes() == arr.tobytes()
    finish("criterion-2 adapter merge vs elementwise reference (1e-12) "
           "and bit-exact archive round-trip", started, 5.0)


def test_criterion_3_acceptance_matrix_matches_brute_force():
    started = time.perf_counter()
    rng = np.random.default_rng(303)
    targets = (0.05, 0.1, 0.5)
    for trial in range(500):
        n_morphs = int(rng.integers(1, 51))
        n_frs = int(rng.integers(1, 5))
        attempts = int(rng.integers(1, 5))
        semantics = ("per-subject-min", "same-attempt")[trial % 2]
        target = targets[trial % len(targets)]
        mated_rows = [(f"m{i}", role, f"f{j}", t, float(rng.integers(0, 20)))
                      for i in range(n_morphs) for role in ("a", "b")
                      for j in range(n_frs) for t in range(1, attempts + 1)]
        non_mated_rows = [(f"f{j}", float(rng.integers(0, 20)))
                          for j in range(n_frs) for _ in range(40)]
        scores = ComparisonScoreSet(
            mated=[MatedScore(*row) for row in mated_rows],
            non_mated=[NonMatedScore(*row) for row in non_mated_rows])
        matrix = compute_map(scores, calibrate_thresholds(scores, target),
                             semantics)
        expected_values, expected_taus = brute_force_map(
            mated_rows, non_mated_rows, target, semantics)
        assert matrix.values == expected_values, trial
        assert matrix.thresholds == expected_taus, trial
    finish("criterion-3 acceptance matrix vs brute-force enumeration "
           "(500 score sets, <=50 morphs, exact)", started, 30.0)


def test_criterion_4_threshold_calibration_matches_scan():
    started = time.perf_counter()
    rng = np.random.default_rng(404)
    targets = (0.0, 0.001, 0.01, 0.1, 0.5, 1.0)
    for trial in range(200):
        n = int(rng.integers(1, 10001))
        scores = rng.integers(0, 25, size=n).astype(float).tolist()
        target = targets[trial % len(targets)]
        assert calibrate_threshold(scores, target) \
            == scan_threshold(scores, target), (trial, n, target)

    # 1000 distinct scores: the top one is exactly the permille cut
    ladder = [float(v) for v in range(1000)]
    tau = calibrate_threshold(ladder, 0.001)
    assert tau == 999.0
    assert sum(1 for s in ladder if s >= tau) / len(ladder) == 0.001
    # the match rule includes the threshold itself
    grid = [MatedScore("m", role, "f", 1, 999.0) for role in ("a", "b")]
    ts = calibrate_thresholds(
        ComparisonScoreSet(mated=grid,
                           non_mated=[NonMatedScore("f", s) for s in ladder]),
        0.001)
    assert ts.is_match("f", 999.0) and not ts.is_match("f", 998.999)
    finish("criterion-4 threshold calibration vs scan oracle "
           "(200 multisets, n<=10000, exact)", started, 20.0)


def test_criterion_5_gaussian_distance_two_routes():
    started = time.perf_counter()
    rng = np.random.default_rng(505)

    def spd(d, scale=1.0):
        a = rng.normal(size=(d, d))
        return scale * (a @ a.T) + 0.1 * np.eye(d)

    for _ in range(30):
        d = int(rng.integers(1, 17))
        mu, sigma = rng.normal(size=d), spd(d)
        assert frechet_distance(mu, sigma, mu, sigma) <= 1e-8

    for _ in range(30):
        d = int(rng.integers(1, 17))
        mu1, mu2 = rng.normal(size=d), rng.normal(size=d)
        got = frechet_distance(mu1, np.eye(d), mu2, np.eye(d))
        assert abs(got - float(np.sum((mu1 - mu2) ** 2))) <= 1e-9

    for _ in range(100):
        d = int(rng.integers(1, 17))
        mu1, mu2 = rng.normal(size=d), rng.normal(size=d)
        s1, s2 = spd(d), spd(d, scale=2.0)
        got = frechet_distance(mu1, s1, mu2, s2)
        ref = sqrtm_frechet(mu1, s1, mu2, s2)
        assert abs(got - ref) <= 1e-6 * max(1.0, abs(ref))
    finish("criterion-5 Gaussian distance: zero on identical moments "
           "(1e-8), mean-shift closed form (1e-9), sqrtm route (1e-6, "
           "100 SPD pairs)", started, 10.0)


def test_criterion_6_pipeline_generates_and_resumes(tmp_path):
    started = time.perf_counter()
    root = tmp_path / "data"
    layout = LayoutDescriptor.from_dict(
        build_dataset(root, subjects=20, images=10, seed=606))
    manifest = ingest(root, layout, "acceptance")
    subjects = sorted(manifest.subjects)
    pairs = [MorphPair(f"{a}__{b}", a, b, 0.5)
             for a, b in zip(subjects[::2], subjects[1::2])]
    assert len(pairs) == 10

    gen = CountingGeneration(resolution=16)
    rec = CountingRecognition()
    astore = AdapterStore(tmp_path / "cache" / "adapters")
    istore = IdentityStore(tmp_path / "cache" / "identity")
    base_ft = FineTuneConfig(steps=5)

    for ablation in VARIANTS.values():
        ftcfg = finetune_config_for_variant(base_ft, ablation)
        for sid in subjects:
            recs = manifest.subject_images(sid)[:ablation.images_per_subject]
            paths = [r.path for r in recs]
            ids = [r.image_id for r in recs]
            if ablation.use_adapters:
                fine_tune(manifest.subjects[sid], paths, ftcfg, gen,
                          image_ids=ids, store=astore)
            if ablation.use_identity:
                extract_identity(manifest.subjects[sid], paths, rec,
                                 image_ids=ids, store=istore)

    def builder_for(ablation):
        def builder(pair):
            return build_request(pair, ablation, manifest,
                                 identity_store=istore, adapter_store=astore,
                                 finetune_config=base_ft, prompt="p",
                                 steps=2, resolution=16)
        return builder

    reports = {}
    for name, ablation in VARIANTS.items():
        reports[name] = run_batch(pairs, builder_for(ablation), gen,
                                  tmp_path / "morphs",
                                  tmp_path / "runs" / f"{name}.jsonl")
    assert all(r.ok == 10 and r.failed == 0 for r in reports.values())
    ok_entries = sum(
        1 for name in VARIANTS
        for e in RunManifest(tmp_path / "runs" / f"{name}.jsonl").entries()
        if e["status"] == "ok")
    assert ok_entries == 50

    calls_before = gen.generate_calls
    for name, ablation in VARIANTS.items():
        resumed = run_batch(pairs, builder_for(ablation), gen,
                            tmp_path / "morphs",
                            tmp_path / "runs" / f"{name}.jsonl")
        assert (resumed.ok, resumed.failed, resumed.skipped) == (0, 0, 10)
    assert gen.generate_calls == calls_before

    request_c = builder_for(VARIANTS["C"])(pairs[0])
    request_d = builder_for(VARIANTS["D"])(pairs[0])
    assert request_c.adapters is None and request_c.identity is not None
    assert request_d.adapters is not None and request_d.identity is None
    finish("criterion-6 pipeline: 10 pairs x 5 variants -> 50 outputs, "
           "resume regenerates nothing, single-source variants hold",
           started, 60.0)


def test_criterion_7_report_cell_formatting():
    started = time.perf_counter()
    assert format_cell(*sample_mean_std([1.0, 2.0, 3.0])) == "2.00±1.00"
    assert format_cell(*sample_mean_std([5.0])) == "5.00±0.00"
    report = QualityReport(samples={("m", "ours", "ds"): [1.0, 2.0, 3.0]})
    assert "ours,2.00±1.00" in report.table("m")
    finish("criterion-7 aggregate cells render as mean±std with two "
           "decimals", started, 5.0)


def test_criterion_8_pair_selection_matches_brute_force():
    started = time.perf_counter()
    rng = np.random.default_rng(808)
    for trial in range(30):
        n = int(rng.integers(2, 21))
        top_k = int(rng.integers(1, 5))
        max_pairs = (None if rng.uniform() < 0.5
                     else int(rng.integers(1, 2 * n)))
        genders = {f"p{i:02d}": ("female", "male", "unknown")[int(rng.integers(0, 3))]
                   for i in range(n)}
        embeddings = {sid: rng.normal(size=6) for sid in genders}
        manifest = Manifest(dataset="unit")
        for sid, gender in genders.items():
            manifest.subjects[sid] = SubjectRecord(subject_id=sid,
                                                   gender=gender, images=[])
        got = select_pairs(manifest, embeddings, top_k=top_k,
                           max_pairs=max_pairs)
        expected = brute_force_pairs(
            sorted(genders), genders,
            {sid: list(map(float, vec)) for sid, vec in embeddings.items()},
            top_k, max_pairs=max_pairs)
        assert [(p.subject_a, p.subject_b) for p in got] \
            == [(a, b) for a, b, _ in expected], trial
        for p, (_, _, sim) in zip(got, expected):
            assert abs(p.similarity - sim) <= 1e-12
    finish("criterion-8 pair selection vs nested-loop reference "
           "(30 corpora, <=20 subjects)", started, 5.0)
