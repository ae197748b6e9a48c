from __future__ import annotations

import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agent_rt.cli import main
from agent_rt.executor import EventKind, lower_actions
from agent_rt.grammar import ActionSequence, KeyChunk, MouseDelta
from agent_rt.harness import SimEnv, SimState
from agent_rt.pipeline import (
    GUI, OVERWORLD, AbsSample, Annotations, DatasetSample, Diagnostics, EmptyStream, FilterReport,
    FrameActionPair, FrameRef, InstructionSpan, KeyEvent, PipelineConfig, RawInputLog, ReasoningPoint,
    RelPoll, VideoIndex, align_streams, apply_alignment, assemble_samples, build_pairs,
    classify_scene, curate_session, default_templates, discretize_mouse, filter_idle, find_jitter_runs,
    match_score, mouse_per_frame, parse_event_log, read_samples, reconstruct_keyboard, stamp_template,
    write_event_log, write_samples,
)
from agent_rt.pipeline.keyboard import normalize_key
from agent_rt.pipeline.scene import DecodeError, to_gray
import oracles
from sessions import make_session, quantized_truth

W = KeyChunk.of("W")
E = KeyChunk()


def pair(i, mouse=(0, 0, 0), chunks=None, ts=None):
    chunks = chunks if chunks is not None else (E,) * 6
    return FrameActionPair(FrameRef("frames", i), ts if ts is not None else 200.0 * i,
                           MouseDelta(*mouse), tuple(chunks))


def idle(i):
    return pair(i)


def active(i):
    return pair(i, chunks=(W,) * 6)


class TestLogs:
    def test_parse_and_write_round_trip(self):
        raw = RawInputLog([KeyEvent(1.5, "W", True), KeyEvent(9.0, "W", False)],
                          [RelPoll(2.0, 3, -1, 0)], [AbsSample(3.0, 10, 20)], started_at=0.25)
        buf = io.StringIO()
        write_event_log(raw, buf)
        back = parse_event_log(buf.getvalue().splitlines())
        assert back == raw

    def test_monotone_required(self):
        with pytest.raises(ValueError):
            RawInputLog([KeyEvent(5, "W", True), KeyEvent(1, "W", False)])

    def test_unknown_stream(self):
        with pytest.raises(ValueError):
            parse_event_log(['{"t_us": 1, "stream": "gamepad"}'])

    def test_video_interval_positive(self):
        with pytest.raises(ValueError):
            VideoIndex(0.0, 0.0, 3)


class TestAlign:
    def test_input_earlier(self):
        raw = RawInputLog([KeyEvent(0, "A", True), KeyEvent(500, "A", False), KeyEvent(1300, "W", True)],
                          started_at=0.0)
        video = VideoIndex(1200.0, 200.0, 10)
        al = align_streams(video, raw)
        assert (al.offset_ms, al.frames_dropped) == (1200.0, 0)
        indices, times, log = apply_alignment(video, raw, al)
        assert indices[0] == 0 and times[0] == 1200.0
        assert [e.t for e in log.key_events] == [1300]

    def test_zero_offset(self):
        raw = RawInputLog([KeyEvent(100, "W", True)], started_at=100.0)
        video = VideoIndex(100.0, 200.0, 4)
        al = align_streams(video, raw)
        assert (al.offset_ms, al.frames_dropped, al.suspicious) == (0.0, 0, False)
        _, _, log = apply_alignment(video, raw, al)
        assert log.key_events == raw.key_events

    def test_video_earlier_drops_frames(self):
        raw = RawInputLog([KeyEvent(1000, "W", True)], started_at=1000.0)
        video = VideoIndex(300.0, 200.0, 10)
        diags = Diagnostics()
        al = align_streams(video, raw, diags)
        assert al.offset_ms == -700.0
        assert al.frames_dropped == 4
        assert al.origin == 1100.0
        assert diags.codes() == ["alignment-offset"]

    def test_large_offset_flagged(self):
        diags = Diagnostics()
        al = align_streams(VideoIndex(6000.0, 200.0, 3), RawInputLog(started_at=0.0), diags)
        assert al.suspicious
        assert diags.codes() == ["alignment-offset"]

    def test_empty_streams(self):
        with pytest.raises(EmptyStream):
            align_streams(VideoIndex(0.0, 200.0, 0), RawInputLog(started_at=0.0))
        with pytest.raises(EmptyStream):
            align_streams(VideoIndex(0.0, 200.0, 3), RawInputLog())
        with pytest.raises(EmptyStream):
            align_streams(VideoIndex(0.0, 200.0, 3), RawInputLog(started_at=5000.0))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(-3000, 3000), st.integers(0, 10_000))
    def test_offset_recovered_exactly(self, offset, seed):
        s = make_session(seed, offset, n_frames=20)
        al = align_streams(s.video, s.raw)
        assert al.offset_ms == offset
        assert al.frames_dropped == s.frames_dropped


class TestKeyboard:
    def test_press_release_within_frame(self):
        ev = [KeyEvent(10, "W", True), KeyEvent(150, "W", False)]
        (chunks,) = reconstruct_keyboard(ev, [0.0])
        assert chunks == (W, W, W, W, E, E)

    def test_no_events(self):
        assert reconstruct_keyboard([], [0.0, 200.0]) == [(E,) * 6] * 2

    def test_held_across_frames(self):
        ev = [KeyEvent(180, "W", True), KeyEvent(280, "W", False)]
        a, b = reconstruct_keyboard(ev, [0.0, 200.0])
        assert a[5] == W and b[0] == W and b[1] == W and b[2] == E
        stream = lower_actions([ActionSequence(MouseDelta(0, 0, 0), c) for c in (a, b)])
        assert [(e.at, e.kind.value) for e in stream] == [(166, "key-down"), (266, "key-up")]

    def test_dangling_up(self):
        diags = Diagnostics()
        (chunks,) = reconstruct_keyboard([KeyEvent(5, "A", False)], [0.0], diags)
        assert chunks == (E,) * 6
        assert diags.codes() == ["dangling-up"]

    def test_auto_repeat_absorbed(self):
        ev = [KeyEvent(t, "W", True) for t in (0, 30, 60, 90)] + [KeyEvent(140, "W", False)]
        (chunks,) = reconstruct_keyboard(ev, [0.0])
        assert chunks == (W, W, W, W, E, E)

    def test_too_many_keys(self):
        ev = [KeyEvent(i, k, True) for i, k in enumerate("WASDE")]
        diags = Diagnostics()
        (chunks,) = reconstruct_keyboard(ev, [0.0], diags)
        assert all(len(c) == 4 for c in chunks)
        assert "too-many-keys" in diags.codes()

    @pytest.mark.parametrize("raw,key", [
        ("LShift", "Shift"), ("w", "W"), ("LButton", "LMB"), ("Escape", "Esc"), ("F13", None),
    ])
    def test_normalize(self, raw, key):
        assert normalize_key(raw) == key

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([-2400, -150, 0, 800, 1999]))
    def test_inverse_of_executor(self, seed, offset):
        s = make_session(seed, offset, n_frames=25)
        al = align_streams(s.video, s.raw)
        _, times, log = apply_alignment(s.video, s.raw, al)
        chunks = reconstruct_keyboard(log.key_events, times)
        assert chunks == s.chunks
        stream = lower_actions([ActionSequence(MouseDelta(0, 0, 0), c) for c in chunks])
        got = sorted((e.at, e.kind.value, e.key) for e in stream
                     if e.kind in (EventKind.KEY_UP, EventKind.KEY_DOWN))
        assert got == quantized_truth(s)


class TestMouse:
    def test_overworld_sum(self):
        raw = RawInputLog(rel_polls=[RelPoll(5, 3, 0), RelPoll(10, 4, -2), RelPoll(15, 5, 0)])
        assert mouse_per_frame(raw, OVERWORLD, (0, 200)) == (12, -2, 0)

    def test_gui_abs_difference(self):
        raw = RawInputLog(rel_polls=[RelPoll(5, 300, 300)],
                          abs_positions=[AbsSample(0, 100, 100), AbsSample(190, 160, 148)])
        assert mouse_per_frame(raw, GUI, (0, 200)) == (60, 48, 0)

    def test_empty_window(self):
        assert mouse_per_frame(RawInputLog(), OVERWORLD, (0, 200)) == (0, 0, 0)
        assert mouse_per_frame(RawInputLog(), GUI, (0, 200)) == (0, 0, 0)

    def test_wheel_always_from_polls(self):
        raw = RawInputLog(rel_polls=[RelPoll(5, 0, 0, 1), RelPoll(9, 0, 0, 1)],
                          abs_positions=[AbsSample(0, 0, 0), AbsSample(100, 5, 5)])
        assert mouse_per_frame(raw, GUI, (0, 200))[2] == 2

    def test_gui_without_abs_falls_back(self):
        diags = Diagnostics()
        raw = RawInputLog(rel_polls=[RelPoll(5, 7, 1)])
        assert mouse_per_frame(raw, GUI, (0, 200), diags) == (7, 1, 0)
        assert diags.codes() == ["no-abs-sample"]

    def test_unknown_scene(self):
        with pytest.raises(ValueError):
            mouse_per_frame(RawInputLog(), "menu", (0, 200))

    @pytest.mark.parametrize("raw,units", [((10, -8), (2, -2)), ((12, 6), (2, 2)), ((0, 0), (0, 0)),
                                           ((-12, -6), (-2, -2)), ((7, 2), (1, 1))])
    def test_discretize_examples(self, raw, units):
        m = discretize_mouse(*raw)
        assert (m.dx, m.dy) == units

    def test_discretize_table(self):
        for dx in range(-60, 61):
            for dy in range(-60, 61, 3):
                m = discretize_mouse(dx, dy)
                assert (m.dx, m.dy) == (oracles.round_half_away(dx / 5), oracles.round_half_away(dy / 4))

    def test_discretize_clamps(self):
        m = discretize_mouse(10_000, -10_000, 9)
        assert (m.dx, m.dy, m.dz) == (999, -999, 5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_per_scene_oracle(self, seed):
        s = make_session(seed, 0, n_frames=30, gui_prob=0.5)
        _, pairs = build_pairs(s.video, s.raw, list(s.scenes))
        assert [p.mouse for p in pairs] == s.expected_mouse()
        assert [p.scene for p in pairs] == s.scenes[s.frames_dropped:]


def ncc_oracle(gray, patch, x, y, search):
    best = -1.0
    h, w = patch.shape
    for yy in range(max(0, y - search), y + search + 1):
        for xx in range(max(0, x - search), x + search + 1):
            win = gray[yy:yy + h, xx:xx + w]
            if win.shape != patch.shape or win.std() == 0:
                continue
            best = max(best, float(np.corrcoef(win.ravel(), patch.ravel())[0, 1]))
    return best


@pytest.fixture(scope="module")
def noise():
    return np.random.default_rng(5).integers(0, 256, (720, 1280, 3)).astype(np.uint8)


class TestScene:
    def test_stamped_is_gui(self, noise):
        t = default_templates()[0]
        assert classify_scene(stamp_template(noise, t)) == GUI

    def test_noise_is_overworld(self, noise):
        assert classify_scene(noise) == OVERWORLD

    def test_brute_force_ncc(self, noise):
        t = default_templates()[0]
        for opacity in (0.2, 0.5, 1.0):
            gray = to_gray(stamp_template(noise, t, opacity))
            assert match_score(gray, t) == pytest.approx(ncc_oracle(gray, t.patch, t.x, t.y, t.search),
                                                          abs=1e-9)

    def test_opacity_sweep(self, noise):
        t = default_templates()[0]
        scores = [match_score(to_gray(stamp_template(noise, t, o)), t) for o in np.linspace(0, 1, 21)]
        assert all(b >= a for a, b in zip(scores, scores[1:]))
        for o, s in zip(np.linspace(0, 1, 21), scores):
            img = stamp_template(noise, t, o)
            assert (classify_scene(img) == GUI) == (s >= 0.8)

    def test_half_opacity_boundary(self, noise):
        t = default_templates()[0]
        img = stamp_template(noise, t, 0.5)
        score = match_score(to_gray(img), t)
        assert score == pytest.approx(0.8819, abs=1e-4)
        assert classify_scene(img) == GUI
        assert classify_scene(img, threshold=score) == GUI
        assert classify_scene(img, threshold=np.nextafter(score, 2)) == OVERWORLD
        assert classify_scene(stamp_template(noise, t, 0.4)) == OVERWORLD

    def test_decode_error(self):
        with pytest.raises(DecodeError):
            classify_scene(b"garbage")

    def test_simenv_frames(self):
        env = SimEnv(3)
        closed = env.frame_bytes(SimState(), 0)
        opened = env.frame_bytes(SimState(ui_open=True), 0)
        assert classify_scene(closed) == OVERWORLD
        assert classify_scene(opened) == GUI


class TestFilter:
    def test_keep_five_percent(self):
        pairs = [idle(i) for i in range(100)] + [active(100 + i) for i in range(10)]
        rep = FilterReport()
        out = filter_idle(pairs, 0.05, report=rep)
        assert sum(p.idle for p in out) == 5
        assert sum(not p.idle for p in out) == 10
        assert [p.frame.index for p in out if p.idle] == [19, 39, 59, 79, 99]
        assert rep.idle_runs == [(100, 5)]

    def test_all_active(self):
        pairs = [active(i) for i in range(30)]
        assert filter_idle(pairs) == pairs

    def test_short_run(self):
        pairs = [active(0)] + [idle(i) for i in range(1, 20)] + [active(20)]
        rep = FilterReport()
        out = filter_idle(pairs, report=rep)
        assert out == [pairs[0], pairs[-1]]
        assert rep.idle_runs == [(19, 0)]

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            filter_idle([], 1.5)

    def test_jitter_run_dropped(self):
        jit = [pair(i, (3 if i % 2 else -3, 0, 0)) for i in range(12)]
        pairs = [active(100)] + jit + [active(101)]
        assert find_jitter_runs(pairs) == [(1, 13)]
        rep = FilterReport()
        out = filter_idle(pairs, report=rep)
        assert out == [pairs[0], pairs[-1]]
        assert rep.jitter_dropped == 12

    def test_short_or_drifting_motion_kept(self):
        short = [pair(i, (3 if i % 2 else -3, 0, 0)) for i in range(9)]
        drift = [pair(i, (30 if i % 2 else -3, 0, 0)) for i in range(12)]
        assert find_jitter_runs(short) == []
        assert find_jitter_runs(drift) == []

    def test_seeded_random_mode(self):
        pairs = [idle(i) for i in range(2000)]
        a = filter_idle(pairs, 0.05, seed=1)
        assert a == filter_idle(pairs, 0.05, seed=1)
        assert 60 <= len(a) <= 140

    @given(st.lists(st.tuples(st.booleans(), st.integers(1, 80)), max_size=12),
           st.sampled_from([0.05, 0.1, 0.25, 0.5]))
    def test_conservation(self, runs, ratio):
        pairs = []
        for is_idle, n in runs:
            pairs += [(idle if is_idle else active)(len(pairs) + k) for k in range(n)]
        rep = FilterReport()
        out = filter_idle(pairs, ratio, report=rep)
        assert rep.active_in == rep.active_out == sum(not p.idle for p in pairs)
        assert sum(not p.idle for p in out) == rep.active_in
        for n, kept in rep.idle_runs:
            assert abs(kept - ratio * n) <= 1
        assert [p.frame.index for p in out] == sorted(p.frame.index for p in out)


class TestSamples:
    def test_pretrain_windows(self):
        pairs = [active(i) for i in range(47)]
        samples = list(assemble_samples(pairs, None, "pretrain", True))
        assert [len(s.steps) for s in samples] == [20, 20, 7]
        assert len(list(assemble_samples(pairs, None, "pretrain", False))) == 47

    def test_reasoning_history_stops_at_next(self):
        pairs = [active(i) for i in range(40)]
        ann = Annotations(reasoning=[ReasoningPoint(0.0, "a"), ReasoningPoint(1810.0, "b")])
        samples = list(assemble_samples(pairs, ann, "reasoning", True))
        first = samples[0]
        assert [p.frame.index for p in first.steps] == list(range(9))
        assert (first.reasoning, first.terminated_by) == ("a", "reasoning")
        second = samples[1]
        assert len(second.steps) == 20 and second.terminated_by == "cap"
        assert second.prev_reasoning == "a"

    def test_reasoning_truncated_by_session_end(self):
        pairs = [active(i) for i in range(15)]
        diags = Diagnostics()
        ann = Annotations(reasoning=[ReasoningPoint(400.0, "a")])
        assert list(assemble_samples(pairs, ann, "reasoning", True, diagnostics=diags)) == []
        assert diags.codes() == ["trajectory-truncated"]

    def test_reasoning_single_step(self):
        pairs = [active(i) for i in range(6)]
        ann = Annotations(reasoning=[ReasoningPoint(210.0, "a"), ReasoningPoint(850.0, "b")])
        samples = list(assemble_samples(pairs, ann, "reasoning", False))
        assert [s.steps[0].frame.index for s in samples] == [1, 2, 3, 4, 5]
        assert [s.reasoning for s in samples] == ["a", None, None, "b", None]
        assert [s.prev_reasoning for s in samples] == [None, "a", "a", "a", "b"]

    def test_instruct_single_step(self):
        pairs = [active(i) for i in range(10)]
        ann = Annotations(instructions=[InstructionSpan(0, 800, "go left"), InstructionSpan(1000, 1600, "jump")])
        diags = Diagnostics()
        samples = list(assemble_samples(pairs, ann, "instruct", False, diagnostics=diags))
        assert [s.instruction for s in samples] == ["go left"] * 4 + ["jump"] * 3
        assert all(len(s.steps) == 1 for s in samples)
        assert diags.codes() == ["annotation-gap"]

    def test_instruct_history_per_span(self):
        pairs = [active(i) for i in range(30)]
        ann = Annotations(instructions=[InstructionSpan(0, 5000, "a"), InstructionSpan(5000, 6000, "b")])
        samples = list(assemble_samples(pairs, ann, "instruct", True))
        assert [(s.instruction, len(s.steps)) for s in samples] == [("a", 20), ("a", 5), ("b", 5)]

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            list(assemble_samples([], None, "captions", False))

    @given(st.integers(1, 120), st.lists(st.integers(0, 119), max_size=10))
    def test_trajectory_shape(self, n, points):
        pairs = [active(i) for i in range(n)]
        ann = Annotations(reasoning=[ReasoningPoint(200.0 * p + 7, f"r{p}") for p in points])
        starts = sorted({p for p in points if p < n})
        for s in assemble_samples(pairs, ann, "reasoning", True):
            first = s.steps[0].frame.index
            last = s.steps[-1].frame.index
            assert 1 <= len(s.steps) <= 20
            assert first in starts
            if s.terminated_by == "reasoning":
                assert last + 1 in starts
            else:
                assert s.terminated_by == "cap" and len(s.steps) == 20
            assert not any(first < p <= last for p in starts)

    def test_jsonl_round_trip(self):
        s = DatasetSample("instruct", True, [active(0), pair(1, (2, -1, 1))], instruction="go")
        buf = io.StringIO()
        assert write_samples([s], buf) == 1
        assert read_samples(io.StringIO(buf.getvalue())) == [s]
        rec = json.loads(buf.getvalue())
        assert rec["schema_version"] == 1
        assert rec["steps"][1]["action"] == "2 -1 1 ; ; ; ; ; ;"

    def test_schema_version_required(self):
        with pytest.raises(ValueError):
            DatasetSample.from_record({"kind": "pretrain", "history": False, "steps": []})


class TestCurate:
    def _session(self, tmp_path, offset=1500, ann=None):
        s = make_session(11, offset, n_frames=80, idle_prob=0.5)
        return s, s.write(tmp_path / "session", ann)

    def test_pretrain(self, tmp_path):
        s, root = self._session(tmp_path)
        res = curate_session(root, "pretrain", True)
        assert res.alignment.offset_ms == 1500
        assert res.pairs_in == 80
        r = res.filter_report
        assert r.active_in == r.active_out
        assert all(1 <= len(x.steps) <= 20 for x in res.samples)
        assert sum(len(x.steps) for x in res.samples) == r.active_out + r.idle_out

    def test_reasoning_skips_filter(self, tmp_path):
        ann = {"reasoning": [{"t_us": (1_000_000 + 200 * k) * 1000 + 50, "text": f"r{k}"} for k in (0, 30)]}
        s, root = self._session(tmp_path, 0, ann)
        res = curate_session(root, "reasoning", True)
        assert res.filter_report is None
        assert [len(x.steps) for x in res.samples] == [20, 20]

    def test_frames_dir_scene_detection(self, tmp_path):
        s, root = self._session(tmp_path, 0)
        video = json.loads((root / "video.json").read_text())
        del video["scenes"]
        video["frame_count"] = 3
        (root / "video.json").write_text(json.dumps(video))
        (root / "frames").mkdir()
        env = SimEnv(0)
        (root / "frames" / "000000.jpg").write_bytes(env.frame_bytes(SimState(), 0))
        (root / "frames" / "000001.jpg").write_bytes(env.frame_bytes(SimState(ui_open=True), 1))
        res = curate_session(root, "pretrain", False, PipelineConfig(keep_ratio=1.0))
        assert [x.steps[0].scene for x in res.samples] == [OVERWORLD, GUI, OVERWORLD]

    def test_config(self, tmp_path):
        path = tmp_path / "p.toml"
        path.write_text("[pipeline]\nkeep_ratio = 0.1\n")
        assert PipelineConfig.load(path).keep_ratio == 0.1
        with pytest.raises(ValueError):
            PipelineConfig.from_mapping({"keep": 1})

    def test_cli(self, tmp_path, capsys):
        s, root = self._session(tmp_path)
        out = tmp_path / "out.jsonl"
        assert main(["curate", "--in", str(root), "--out", str(out)]) == 0
        text = capsys.readouterr().out
        assert "offset 1500.0 ms" in text
        with open(out, encoding="utf-8") as fh:
            assert read_samples(fh)
