"""Acceptance suite: one test per release criterion, each printing a PASS line
with its measured numbers. Heavy shared work (ranking-head training) runs once
in a session fixture and is charged to the ranking-accuracy budget."""

import json
import time

import numpy as np
import pytest

from annotrack.features import (
    FeatureMap,
    GradientFeatureExtractor,
    LocalizerConfig,
    cross_correlate,
    fuse_templates,
)
from annotrack.geometry import (
    BoundingBox,
    Keyframe,
    blend_weight,
    iou,
    linear_interpolate,
    template_window,
)
from annotrack.guidance import (
    GuidanceConfig,
    LabeledVideo,
    PairExample,
    RankingHeadParams,
    TrainConfig,
    bce_loss_and_grad,
    build_context,
    generate_training_pairs,
    head_accuracy,
    prepare_examples,
    sample_candidates,
    select_next_frame,
    train_head,
)
from annotrack.interp import InterpConfig
from annotrack.media import synth_generate
from annotrack.session import AnnotationEvent, add_keyframe, finalize, remove_keyframe, replay_events, start_session
from annotrack.simulate import SimulationConfig, TimeModelParams, annotation_time, simulate_track

from scenes import (
    benchmark_suite,
    crossing_scene,
    growth_scene,
    linear_scene,
    occlusion_scene_names,
    pillar_scene,
    static_scene,
    turn_scene,
    two_object_scene,
    zigzag_scene,
)

EXTRACTOR = GradientFeatureExtractor()
FAST_INTERP = InterpConfig(localizer=LocalizerConfig(scales=(1.0,)))
GUIDE_CFG = GuidanceConfig(horizon=50, candidate_count=8, reference_count=3)
EVAL_SEED = 101


def report(name, elapsed, budget, detail):
    print(f"\nPASS {name}: {detail} [{elapsed:.1f}s / budget {budget:.0f}s]")


# --- shared fixtures -------------------------------------------------------------


def _training_videos():
    specs = []
    for i, px in enumerate((38, 52, 66, 80, 94, 104)):
        specs.append((f"pillarA{i}", pillar_scene(frames=60, noise=1.0, pillar_x=px, turn=False), 500 + i))
        specs.append((f"pillarB{i}", pillar_scene(frames=60, noise=1.0, pillar_x=px, turn=True), 520 + i))
    for i, ta in enumerate((12, 16, 20, 24, 28, 32, 36, 40)):
        specs.append(
            (f"turn{i}", turn_scene(frames=60, noise=1.0, turn_at=ta, pattern="checker" if i % 2 else "stripes"), 600 + i)
        )
    for i in range(6):
        specs.append((f"zig{i}", zigzag_scene(frames=60, noise=1.0, amplitude=16 + 2 * i), 700 + i))
    for i in range(4):
        specs.append((f"grow{i}", growth_scene(frames=60, noise=1.0, grow=1.5 + 0.15 * i), 800 + i))
    specs.append(("crossA", crossing_scene(frames=60, noise=1.0, stall=True), 900))
    specs.append(("crossB", crossing_scene(frames=60, noise=1.0, stall=False), 901))
    videos = []
    for name, scene, seed in specs:
        store, tracks = synth_generate(scene, seed=seed)
        videos.append(LabeledVideo(source={"kind": "memory", "id": name}, store=store, tracks=tracks[:1]))
    return videos


@pytest.fixture(scope="session")
def trained_head():
    """Generates labeled pairs from the training scenes and fits the ranking head."""
    t0 = time.perf_counter()
    videos = _training_videos()
    pairs = generate_training_pairs(
        videos, FAST_INTERP, GUIDE_CFG, EXTRACTOR, seed=42, contexts_per_track=6, max_pairs_per_context=20
    )
    stores = {json.dumps(v.source, sort_keys=True): v.store for v in videos}
    examples = prepare_examples(pairs, EXTRACTOR, stores=stores)
    rng = np.random.default_rng(0)
    order = rng.permutation(len(examples))
    n_test = len(examples) // 6
    held_out = [examples[i] for i in order[:n_test]]
    train = [examples[i] for i in order[n_test:]]
    init = RankingHeadParams.random(np.random.default_rng(7), EXTRACTOR.channels, GUIDE_CFG.reference_count + 2)
    params, history = train_head(train, init, TrainConfig(epochs=10, seed=1, learning_rate=0.05))
    return {
        "params": params,
        "train_size": len(train),
        "held_out": held_out,
        "history": history,
        "elapsed": time.perf_counter() - t0,
    }


# --- criteria ---------------------------------------------------------------------


def test_exact_math():
    """Closed-form operations reproduce their worked examples to 1e-9 relative."""
    t0 = time.perf_counter()
    rel = 1e-9

    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(0, 0, 10, 10)) == 1.0
    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 5, 5)) == 0.0
    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(5, 0, 10, 10)) == pytest.approx(1 / 3, rel=rel)

    k1 = Keyframe(0, BoundingBox(0, 0, 10, 10))
    k2 = Keyframe(10, BoundingBox(20, 0, 30, 10))
    assert linear_interpolate(k1, k2, 0) == k1.box
    mid = linear_interpolate(k1, k2, 5)
    assert (mid.x, mid.y, mid.w, mid.h) == pytest.approx((10, 0, 20, 10), rel=rel)
    const = Keyframe(3, BoundingBox(1, 2, 3, 4)), Keyframe(9, BoundingBox(1, 2, 3, 4))
    got = linear_interpolate(*const, 6)
    assert (got.x, got.y, got.w, got.h) == pytest.approx((1, 2, 3, 4), rel=rel)

    win = template_window(BoundingBox(0, 0, 100, 100))
    assert (win.side, win.center_x, win.center_y) == pytest.approx((200, 50, 50), rel=rel)
    assert template_window(BoundingBox(0, 0, 127, 127), padding=0.0).side == pytest.approx(127, rel=rel)
    win = template_window(BoundingBox(10, 20, 40, 20))
    assert win.side == pytest.approx(np.sqrt(3500), rel=rel)
    assert (win.center_x, win.center_y) == pytest.approx((30, 30), rel=rel)

    assert blend_weight(0, 10) == 1.0
    assert blend_weight(10, 10) == 0.0
    assert blend_weight(5, 10) == pytest.approx(0.25, rel=rel)

    tm = TimeModelParams(t_box=5.2, watch_multiplier=1.0)
    assert annotation_time(0, TimeModelParams(t_box=5.2, watch_multiplier=0.0), 60.0) == 0.0
    assert annotation_time(10, tm, 60.0) == pytest.approx(112.0, rel=rel)
    assert annotation_time(20, tm, 60.0) - annotation_time(10, tm, 60.0) == pytest.approx(52.0, rel=rel)

    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    report("exact-math", elapsed, 1, "all worked examples reproduced at 1e-9 relative")


def test_correlation_oracle():
    """Production correlation equals an independent quadruple-loop oracle bit for bit.

    Inputs are integer-valued, so every float64 partial sum is exact and
    'equal' is well defined regardless of summation order."""
    t0 = time.perf_counter()

    def brute(template, search):
        th, tw, c = template.shape
        sh, sw, _ = search.shape
        out = np.zeros((sh - th + 1, sw - tw + 1))
        for u in range(out.shape[0]):
            for v in range(out.shape[1]):
                acc = 0.0
                for dy in range(th):
                    for dx in range(tw):
                        for ch in range(c):
                            acc += float(template[dy, dx, ch]) * float(search[u + dy, v + dx, ch])
                out[u, v] = acc
        return out

    rng = np.random.default_rng(2024)
    for case in range(200):
        sh, sw = rng.integers(2, 9, 2)
        th = int(rng.integers(1, sh + 1))
        tw = int(rng.integers(1, sw + 1))
        c = int(rng.integers(1, 5))
        search = rng.integers(-4, 5, (sh, sw, c)).astype(np.float64)
        template = rng.integers(-4, 5, (th, tw, c)).astype(np.float64)
        got = cross_correlate(FeatureMap(template), FeatureMap(search)).values
        want = brute(template, search)
        assert np.array_equal(got, want), f"case {case}: mismatch"

    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    report("correlation-oracle", elapsed, 10, "200/200 random instances match exactly")


def test_fusion_algebra():
    """Max fusion is commutative, associative, and idempotent, exactly."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    for case in range(1000):
        h, w_, c = rng.integers(1, 6, 3)
        a, b, c_ = (FeatureMap(rng.standard_normal((h, w_, c))) for _ in range(3))
        ab = fuse_templates([a, b]).values
        ba = fuse_templates([b, a]).values
        assert np.array_equal(ab, ba)
        abc1 = fuse_templates([fuse_templates([a, b]), c_]).values
        abc2 = fuse_templates([a, fuse_templates([b, c_])]).values
        assert np.array_equal(abc1, abc2)
        assert np.array_equal(fuse_templates([a, a]).values, a.values)
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    report("fusion-algebra", elapsed, 5, "1000/1000 cases commutative, associative, idempotent")


def test_gradient_check():
    """Analytic head gradients vs central finite differences on 50 random configs."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(50):
        channels = int(rng.integers(2, 5))
        frames = int(rng.integers(3, 6))
        params = RankingHeadParams.random(rng, channels, frames, conv_channels=4, hidden=6)
        a = int(rng.integers(5, 9))
        batch = [
            PairExample(stack=rng.standard_normal((frames, a, a, channels)), label=int(rng.integers(0, 2)))
            for _ in range(3)
        ]
        _, grads = bce_loss_and_grad(params, batch)
        coords = [(slot, np.unravel_index(int(rng.integers(0, arr.size)), arr.shape))
                  for slot, arr in enumerate(params.arrays())]
        coords.append((len(params.arrays()), ()))
        step = 1e-4
        for slot, index in coords:
            def loss_at(offset):
                p = params.copy()
                arrays = p.arrays()
                if index == ():
                    p.b2 = p.b2 + offset
                else:
                    arrays[slot][index] += offset
                return bce_loss_and_grad(p, batch)[0]

            fd = (loss_at(step) - loss_at(-step)) / (2 * step)
            got = float(grads[slot][index]) if index != () else float(grads[-1])
            err = abs(got - fd) / max(abs(fd), 1e-7)
            worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4, f"worst relative error {worst:.2e}"
    assert elapsed < 60.0
    report("gradient-check", elapsed, 60, f"50 configs, worst relative error {worst:.2e} < 1e-4")


def test_session_scripts():
    """100 randomized sessions: keyframe boxes exact, JSON-replay bit-identical."""
    t0 = time.perf_counter()
    interp_cfg = InterpConfig(delta_cap=4, localizer=LocalizerConfig(scales=(1.0,)))
    guide_cfg = GuidanceConfig(horizon=15, candidate_count=4, reference_count=2)
    head = RankingHeadParams.zeros(EXTRACTOR.channels, guide_cfg.reference_count + 2)
    builders = [
        lambda: static_scene(frames=24, noise=0.8),
        lambda: linear_scene(frames=24, noise=0.8),
        lambda: turn_scene(frames=24, noise=0.8, turn_at=10),
    ]
    for script in range(100):
        rng = np.random.default_rng([9000, script])
        scene = builders[script % len(builders)]()
        store, tracks = synth_generate(scene, seed=int(rng.integers(1 << 30)))
        truth = tracks[0].boxes

        def drawn_box(frame):
            g = truth[frame]
            return BoundingBox(
                g.x + float(rng.normal(0, 1.5)), g.y + float(rng.normal(0, 1.5)),
                g.w * float(rng.uniform(0.9, 1.1)), g.h * float(rng.uniform(0.9, 1.1)),
            )

        state = start_session(
            store, f"v{script}", "obj", Keyframe(0, drawn_box(0)),
            interp_cfg, guide_cfg, head, EXTRACTOR, seed=int(rng.integers(1 << 30)),
        )
        for _ in range(3):
            if state.suggestion is not None and rng.random() < 0.5:
                frame = state.suggestion
            else:
                free = [f for f in range(store.frame_count) if f not in state.annotated_frames()]
                if not free:
                    break
                frame = int(rng.choice(free))
            add_keyframe(state, frame, drawn_box(frame))
        if len(state.keyframes) > 1 and rng.random() < 0.4:
            removable = [kf.frame for kf in state.keyframes]
            remove_keyframe(state, int(rng.choice(removable)))
        finalize(state)

        for kf in state.keyframes:
            assert state.track.boxes[kf.frame] == kf.box, f"script {script}: keyframe box not exact"
            assert state.track.provenance[kf.frame] == "human"

        log = [AnnotationEvent.from_json(e.to_json()) for e in state.events]
        replayed = replay_events(log, store, EXTRACTOR, head)
        assert replayed.track.frames() == state.track.frames()
        for f in state.track.frames():
            assert replayed.track.boxes[f] == state.track.boxes[f], f"script {script}: replay diverged at {f}"
            assert replayed.track.provenance[f] == state.track.provenance[f]
            assert replayed.track.confidence[f] == state.track.confidence[f]

    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    report("session-replay", elapsed, 120, "100 scripts: keyframes exact, replay bit-identical")


def test_strategy_ordering():
    """At 3 boxes per track, visual interpolation beats linear by >= 0.05 and
    single-template forward tracking by >= 0.02 in mean recall@0.7."""
    t0 = time.perf_counter()
    means = {}
    for strategy in ("linear", "tracking", "visual"):
        recalls = []
        for name, scene in benchmark_suite():
            store, tracks = synth_generate(scene, seed=EVAL_SEED)
            stride = (scene.frame_count - 1) // 2
            cfg = SimulationConfig(strategy=strategy, policy="uniform", stride=stride, budget=3, interp=FAST_INTERP)
            _, point, _ = simulate_track(store, tracks[0], cfg, EXTRACTOR)
            recalls.append(point.recall)
        means[strategy] = float(np.mean(recalls))
    elapsed = time.perf_counter() - t0
    assert means["visual"] - means["linear"] >= 0.05, means
    assert means["visual"] - means["tracking"] >= 0.02, means
    assert elapsed < 600.0
    report(
        "strategy-ordering", elapsed, 600,
        f"visual {means['visual']:.3f} vs linear {means['linear']:.3f} (gap "
        f"{means['visual'] - means['linear']:.3f} >= 0.05) vs tracking {means['tracking']:.3f} "
        f"(gap {means['visual'] - means['tracking']:.3f} >= 0.02)",
    )


def test_policy_ordering(trained_head):
    """Mean recall@0.7 at equal budgets: oracle >= guided >= uniform - 0.01, and
    oracle beats uniform by >= 0.03 on the occlusion scenes."""
    t0 = time.perf_counter()
    per_scene = {}
    for name, scene in benchmark_suite():
        store, tracks = synth_generate(scene, seed=EVAL_SEED)
        stride = (scene.frame_count - 1) // 2
        common = dict(strategy="visual", budget=3, interp=FAST_INTERP, guidance=GUIDE_CFG, tau=0.7, seed=11)
        row = {}
        for policy, extra in (
            ("uniform", {"stride": stride}),
            ("guided", {"head": trained_head["params"]}),
            ("oracle", {}),
        ):
            cfg = SimulationConfig(policy=policy, **common, **extra)
            _, point, _ = simulate_track(store, tracks[0], cfg, EXTRACTOR)
            row[policy] = point.recall
        per_scene[name] = row

    uniform = float(np.mean([r["uniform"] for r in per_scene.values()]))
    guided = float(np.mean([r["guided"] for r in per_scene.values()]))
    oracle = float(np.mean([r["oracle"] for r in per_scene.values()]))
    occ = occlusion_scene_names()
    occ_uniform = float(np.mean([per_scene[n]["uniform"] for n in occ]))
    occ_oracle = float(np.mean([per_scene[n]["oracle"] for n in occ]))

    elapsed = time.perf_counter() - t0
    assert oracle >= guided, (oracle, guided)
    assert guided >= uniform - 0.01, (guided, uniform)
    assert occ_oracle - occ_uniform >= 0.03, (occ_oracle, occ_uniform)
    assert elapsed < 900.0
    report(
        "policy-ordering", elapsed, 900,
        f"oracle {oracle:.3f} >= guided {guided:.3f} >= uniform-0.01 ({uniform:.3f}); "
        f"occlusion margin {occ_oracle - occ_uniform:.3f} >= 0.03",
    )


def test_ranking_accuracy(trained_head):
    """Head trained on >= 500 labeled pairs separates held-out pairs above chance."""
    t0 = time.perf_counter()
    assert trained_head["train_size"] >= 500, trained_head["train_size"]
    acc = head_accuracy(trained_head["params"], trained_head["held_out"])
    elapsed = time.perf_counter() - t0 + trained_head["elapsed"]
    assert acc > 0.55, acc
    assert elapsed < 600.0
    report(
        "ranking-accuracy", elapsed, 600,
        f"held-out accuracy {acc:.3f} > 0.55 ({trained_head['train_size']} training pairs, "
        f"{len(trained_head['held_out'])} held out)",
    )


def test_per_object_conditioning(trained_head):
    """On the two-object scene, guidance picks different frames per object in
    at least 8 of 10 seeded runs."""
    t0 = time.perf_counter()
    store, tracks = synth_generate(two_object_scene(), seed=202)
    truth = {t.object_id: t for t in tracks}
    differ = 0
    picks = []
    for seed in range(10):
        chosen = {}
        for oid in ("a", "b"):
            kfs = [Keyframe(0, truth[oid].boxes[0], "simulated-oracle")]
            candidates = sample_candidates({0}, store.frame_count, GUIDE_CFG)
            context = build_context(store, kfs, store.frame_count, GUIDE_CFG, EXTRACTOR, seed=seed * 97 + 5)
            chosen[oid] = select_next_frame(candidates, context, trained_head["params"])
        picks.append((chosen["a"], chosen["b"]))
        differ += chosen["a"] != chosen["b"]
    elapsed = time.perf_counter() - t0
    assert differ >= 8, picks
    report("per-object-conditioning", elapsed, 120, f"selections differ in {differ}/10 seeded runs")
