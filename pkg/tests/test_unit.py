#
# test_unit.py
#
# Unit tests for the streamant timing, scheduling, simulation and metrics modules
#
import itertools
import unittest
import zlib

import numpy as np

import streamant as sa
from streamant import __diag__
from streamant.core import group_by_video
from streamant.schedule import EvaluationQuery, slot_index
from streamant.simulate import oracle_quantize, random_tick_case, simulate_videos

hta = sa.testing


def spaced_segments(n, vocabulary, *, video_id="v", first_s=5.0, spacing_s=3.0, seed=0):
    """``n`` one-second segments with random actions, ``spacing_s`` apart"""
    rng = np.random.default_rng(seed)
    ret = []
    for i in range(n):
        verb, noun = vocabulary.actions[int(rng.integers(vocabulary.size))]
        start = sa.seconds_to_ticks(first_s + i * spacing_s)
        ret.append(vocabulary.segment(video_id, start, start + 1_000_000, verb, noun))
    return ret


def grid_vocabulary(n_verbs, n_nouns):
    return sa.Vocabulary(itertools.product(range(n_verbs), range(n_nouns)))


class TestTimingConfig(unittest.TestCase):
    def testFromSeconds(self):
        cfg = sa.TimingConfig.from_seconds("2.75", "1", runtime_ms="724.98")
        self.assertEqual(sa.TimingConfig(2_750_000, 1_000_000, 724_980), cfg)
        self.assertEqual(cfg, sa.TimingConfig.from_seconds(2.75, 1.0, 0.72498))
        self.assertIn("tau_r=724.98ms", cfg.describe())

    def testInvalidConfigs(self):
        for args in [(0, 0, 1), (1, -1, 1), (1, 0, 0), (1.5, 0, 1)]:
            with self.subTest(args=args), self.assertRaises(sa.ContractError):
                sa.TimingConfig(*args)
        with self.assertRaises(sa.ContractError):
            sa.TimingConfig.from_seconds("1", "1")
        with self.assertRaises(sa.ContractError):
            sa.TimingConfig.from_seconds("1", "1", "0.5", runtime_ms="500")

    def testTickRoundTrip(self):
        rng = np.random.default_rng(3)
        for value in rng.uniform(0, 3600, size=1000):
            ticks = sa.seconds_to_ticks(float(value))
            self.assertLess(abs(sa.ticks_to_seconds(ticks) - value), 1e-6)

    def testSegmentBounds(self):
        with self.assertRaises(sa.ContractError):
            sa.ActionSegment("v", 10, 10, 0, 0, 0)


class TestScoreVector(hta.HarnessAsserts, unittest.TestCase):
    def testTopKTiesLowestIndex(self):
        v = sa.ScoreVector.from_logits([1.0, 3.0, 3.0, 2.0])
        self.assertTopK(v, 3, [1, 2, 3])
        self.assertEqual(1, v.rank_of(2))
        self.assertEqual(0, v.rank_of(1))
        with self.assertRaises(sa.ContractError):
            v.topk(5)

    def testProbabilityValidation(self):
        with self.assertRaises(sa.ContractError):
            sa.ScoreVector([0.5, 0.6])
        with self.assertRaises(sa.ContractError):
            sa.ScoreVector([1.0, -0.0001, 0.0001])
        with self.assertRaises(sa.ContractError):
            sa.ScoreVector.from_logits([0.0, np.inf])
        with self.assertRaises(sa.ContractError):
            sa.ScoreVector.from_logits([0.0, np.nan])

    def testSoftmax(self):
        v = sa.ScoreVector.from_logits([0.0, np.log(3.0), -np.inf])
        self.assertScoresClose(v.as_probabilities(), [0.25, 0.75, 0.0])
        u = sa.ScoreVector.uniform(4)
        self.assertIs(u, u.as_probabilities())

    def testReadOnly(self):
        v = sa.ScoreVector.one_hot(3, 1)
        with self.assertRaises(ValueError):
            v.scores[0] = 1.0


class TestVocabulary(hta.HarnessAsserts, unittest.TestCase):
    def testBuildVocabulary(self):
        voc = sa.build_vocabulary([(0, 0), (0, 1), (0, 0)])
        self.assertEqual([(0, 0), (0, 1)], voc.actions)
        self.assertEqual(2, voc.size)
        self.assertEqual(0, sa.build_vocabulary([]).size)

    def testBuildVocabularyFromRows(self):
        rows = [{"verb_id": "3", "noun_id": "1"}, {"verb_id": 0, "noun_id": 2}]
        voc = sa.build_vocabulary(rows)
        self.assertEqual([(0, 2), (3, 1)], voc.actions)
        self.assertEqual(1, voc.action_index(3, 1))
        with self.assertRaises(sa.ContractError):
            voc.action_index(1, 1)

    def testBuildVocabularyErrors(self):
        for rows in ([(-1, 0)], [{"verb_id": 1}], [("a", 1)]):
            with self.subTest(rows=rows), self.assertRaises(sa.DataFormatError):
                sa.build_vocabulary(rows)

    def testMarginalizeTwoActions(self):
        voc = sa.Vocabulary([(0, 0), (1, 0)])
        verbs, nouns = sa.marginalize_scores(sa.ScoreVector([0.6, 0.4]), voc)
        self.assertScoresClose(verbs, [0.6, 0.4])
        self.assertScoresClose(nouns, [1.0])

    def testMarginalizeOneHot(self):
        voc = grid_vocabulary(3, 4)
        action = voc.action_index(2, 1)
        verbs, nouns = sa.marginalize_scores(sa.ScoreVector.one_hot(voc.size, action), voc)
        self.assertScoresClose(verbs, [0.0, 0.0, 1.0])
        self.assertScoresClose(nouns, [0.0, 1.0, 0.0, 0.0])

    def testMarginalizeMatchesExhaustiveLoop(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            pairs = rng.choice(4 * 5, 10, replace=False)
            voc = sa.Vocabulary([(int(p) // 5, int(p) % 5) for p in pairs])
            v = sa.ScoreVector(rng.dirichlet(np.ones(voc.size)))
            verbs, nouns = sa.marginalize_scores(v, voc)
            expected_verbs = [
                sum(v.scores[i] for i, (verb, _) in enumerate(voc.actions) if verb == vv)
                for vv in voc.verbs
            ]
            expected_nouns = [
                sum(v.scores[i] for i, (_, noun) in enumerate(voc.actions) if noun == nn)
                for nn in voc.nouns
            ]
            self.assertScoresClose(verbs, expected_verbs, tol=1e-12)
            self.assertScoresClose(nouns, expected_nouns, tol=1e-12)
            self.assertAlmostEqual(1.0, verbs.sum(), delta=1e-6)
            self.assertAlmostEqual(1.0, nouns.sum(), delta=1e-6)

    def testMarginalizeCommutesWithMixing(self):
        rng = np.random.default_rng(5)
        voc = grid_vocabulary(3, 3)
        a, b = rng.dirichlet(np.ones(9)), rng.dirichlet(np.ones(9))
        mixed = sa.marginalize_scores(sa.ScoreVector(0.3 * a + 0.7 * b), voc)
        parts = [sa.marginalize_scores(sa.ScoreVector(x), voc) for x in (a, b)]
        for i in range(2):
            self.assertScoresClose(mixed[i], 0.3 * parts[0][i] + 0.7 * parts[1][i], tol=1e-12)

    def testMarginalizeRejectsLogits(self):
        voc = sa.Vocabulary([(0, 0), (1, 0)])
        with self.assertRaises(sa.ContractError):
            sa.marginalize_scores(sa.ScoreVector.from_logits([2.0, 1.0]), voc)


class TestDiagnostics(unittest.TestCase):
    def testEnableDisable(self):
        with hta.reset_harness_context():
            sa.enable_diag(sa.Diagnostics.warn_on_fallback_predictions)
            self.assertTrue(__diag__.warn_on_fallback_predictions)
            sa.enable_all_warnings()
            self.assertTrue(all(getattr(__diag__, name) for name in __diag__._warning_names))
            self.assertFalse(__diag__.enable_debug_on_evaluation)
            sa.disable_diag(sa.Diagnostics.warn_on_rejected_rows)
            self.assertFalse(__diag__.warn_on_rejected_rows)
        self.assertFalse(__diag__.warn_on_fallback_predictions)

    def testUnknownFlag(self):
        with self.assertRaises(ValueError):
            __diag__.enable("warn_on_everything")


class TestSchedule(unittest.TestCase):
    def testAssociateInclusiveDeadline(self):
        cfg = sa.TimingConfig(2, 1, 1)
        seg = sa.ActionSegment("v", 10, 12, 0, 0, 0)
        on_time = sa.PredictionRecord(6, 8, 9)
        late = sa.PredictionRecord(7, 9, 10)
        self.assertEqual([(seg, on_time)], sa.associate([seg], [on_time, late], cfg))
        self.assertEqual([(seg, None)], sa.associate([seg], [late], cfg))

    def testAssociateFallback(self):
        cfg = sa.TimingConfig(2, 1, 1)
        seg = sa.ActionSegment("v", 3, 5, 0, 0, 0)
        fallback = sa.UniformFallback(4, seed=1)
        [(_, record)] = sa.associate([seg], [], cfg, fallback)
        self.assertTrue(record.is_fallback)
        self.assertEqual(fallback(seg), record.scores)

    def testAssociateRequiresSortedInputs(self):
        cfg = sa.TimingConfig(2, 1, 1)
        a = sa.ActionSegment("v", 10, 12, 0, 0, 0)
        b = sa.ActionSegment("v", 5, 12, 0, 0, 0)
        with self.assertRaises(sa.ContractError):
            sa.associate([a, b], [], cfg)
        with self.assertRaises(sa.ContractError):
            sa.associate([a], [sa.PredictionRecord(0, 2, 5), sa.PredictionRecord(0, 2, 4)], cfg)

    def testAssociationMatchesClosedForm(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            _, cfg = random_tick_case(rng)
            starts = sorted(int(s) for s in rng.integers(0, 30 * cfg.runtime + cfg.observation, size=50))
            segments = [sa.ActionSegment("v", s, s + 1, 0, 0, 0) for s in starts]
            trace = sa.run_stream(None, segments, cfg, max(starts))
            for seg, record in sa.associate(segments, trace.records, cfg):
                expected = sa.quantize_timestamp(seg.start, cfg)
                actual = record.input_end if record is not None else None
                self.assertEqual(expected, actual, msg=f"s={seg.start} {cfg}")

    def testMonotoneAndNeverLate(self):
        cfg = sa.TimingConfig(2_750_000, 1_000_000, 724_980)
        previous = None
        for s in range(0, 20_000_000, 12_345):
            t_star = sa.quantize_timestamp(s, cfg)
            if t_star is None:
                self.assertIsNone(previous)
                continue
            if previous is not None:
                self.assertGreaterEqual(t_star, previous)
            previous = t_star
            self.assertGreaterEqual(sa.effective_anticipation(s, cfg), cfg.anticipation)
            self.assertIn(sa.availability(t_star, cfg), sa.slot_times(cfg, s - cfg.anticipation))

    def testExactMultiple(self):
        cfg = sa.TimingConfig(2_000_000, 1_000_000, 500_000)
        for m in range(1, 10):
            s = cfg.anticipation + cfg.observation + m * cfg.runtime
            self.assertEqual(m, slot_index(s, cfg))
            self.assertEqual(s - cfg.anticipation - cfg.runtime, sa.quantize_timestamp(s, cfg))

    def testEvaluationQueryWindow(self):
        cfg = sa.TimingConfig(2_750_000, 1_000_000, 725_000)
        seg = sa.ActionSegment("v", 10_000_000, 11_000_000, 0, 0, 0)
        offline = EvaluationQuery(seg, cfg, sa.EvaluationMode.OFFLINE)
        streaming = EvaluationQuery(seg, cfg, sa.EvaluationMode.STREAMING)
        self.assertEqual((6_250_000, 9_000_000), offline.window())
        self.assertEqual((5_075_000, 7_825_000), streaming.window())
        early = sa.ActionSegment("v", 1_000_000, 2_000_000, 0, 0, 0)
        self.assertIsNone(EvaluationQuery(early, cfg, sa.EvaluationMode.STREAMING).window())

    def testUniformFallbackIsOrderIndependent(self):
        fb = sa.UniformFallback(10, seed=4)
        a = sa.ActionSegment("v", 100, 200, 0, 0, 0)
        b = sa.ActionSegment("w", 100, 200, 0, 0, 0)
        first = fb(a)
        fb(b)
        self.assertEqual(first, fb(a))
        self.assertNotEqual(first, fb(b))
        self.assertNotEqual(first, sa.UniformFallback(10, seed=5)(a))

    def testUniformFallbackSeedsFromVideoChecksum(self):
        segment = sa.ActionSegment("P01_11", 4_000_000, 5_000_000, 0, 0, 0)
        rng = np.random.default_rng([4, zlib.crc32(b"P01_11"), 4_000_000])
        expected = sa.ScoreVector.from_logits(rng.random(10))
        self.assertEqual(expected, sa.UniformFallback(10, seed=4)(segment))


class TestSimulator(unittest.TestCase):
    def testCountsRecords(self):
        cfg = sa.TimingConfig(2_750_000, 1_000_000, 725_000)
        horizon = cfg.observation + 3 * cfg.runtime
        trace = sa.run_stream(None, [], cfg, horizon)
        self.assertEqual(3, len(trace))
        self.assertEqual(
            [cfg.observation + k * cfg.runtime for k in (1, 2, 3)],
            [r.available_at for r in trace.records],
        )
        self.assertEqual(
            [cfg.observation + (k - 1) * cfg.runtime for k in (1, 2, 3)],
            [r.input_end for r in trace.records],
        )
        trace.check()

    def testInferenceIntervalsDoNotOverlap(self):
        cfg = sa.TimingConfig(7, 3, 5)
        trace = sa.run_stream(None, [], cfg, 500)
        intervals = trace.inference_intervals()
        self.assertEqual(cfg.observation, intervals[0][0])
        for (_, end), (start, _) in zip(intervals, intervals[1:]):
            self.assertLessEqual(end, start)

    def testOracleQuantizeMatchesClosedForm(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            s_i, cfg = random_tick_case(rng)
            self.assertEqual(sa.quantize_timestamp(s_i, cfg), oracle_quantize(s_i, cfg))

    def testVerifySchedule(self):
        result = sa.verify_schedule(cases=2000, seed=7, multiples=200)
        print(result.summary())
        self.assertTrue(result.passed, msg=str(result.mismatches[:3]))
        self.assertEqual("2000/2000 exact\n200/200 exact-multiple", result.summary())

    def testTraceDeterminism(self):
        voc = grid_vocabulary(3, 4)
        segments = spaced_segments(10, voc)
        cfg = sa.TimingConfig.from_seconds("2", "1", runtime_ms="300")
        curve = sa.DegradationCurve([(0, 1.0), (1_000_000, 0.2)])
        traces = [
            sa.run_stream(sa.OracleModel(segments, voc.size, curve, anticipation=cfg.anticipation, seed=3), segments, cfg, 30_000_000)
            for _ in range(2)
        ]
        self.assertEqual(traces[0].records, traces[1].records)
        for a, b in zip(traces[0].records, traces[1].records):
            self.assertEqual(a.scores, b.scores)

    def testDegradationCurve(self):
        curve = sa.DegradationCurve([(0, 1.0), (1_000_000, 0.0)])
        self.assertEqual(1.0, curve(0))
        self.assertAlmostEqual(0.75, curve(250_000))
        self.assertEqual(0.0, curve(5_000_000))
        self.assertEqual(0.4, sa.DegradationCurve.constant(0.4)(123))
        parsed = sa.DegradationCurve.from_text("0:1,1:0")
        self.assertAlmostEqual(0.5, parsed(500_000))
        for points in ([], [(0, 1.5)], [(5, 1.0), (5, 0.5)], [(-1, 1.0)]):
            with self.subTest(points=points), self.assertRaises(sa.ContractError):
                sa.DegradationCurve(points)

    def testOracleLookupWithoutUpcomingSegment(self):
        voc = grid_vocabulary(2, 3)
        seg = voc.segment("v", 100, 200, 1, 1)
        scores = sa.oracle_lookup(500, [seg], sa.DegradationCurve.constant(1.0), 0, vocabulary_size=voc.size)
        self.assertEqual(sa.ScoreVector.uniform(voc.size), scores)
        hit = sa.oracle_lookup(50, [seg], sa.DegradationCurve.constant(1.0), 0, vocabulary_size=voc.size)
        self.assertEqual(seg.action_id, int(hit.topk(1)[0]))

    def testStubModelsAreDeterministic(self):
        voc = grid_vocabulary(3, 3)
        train = spaced_segments(30, voc, seed=1)
        for model in (
            sa.TrainingDistributionModel(train, voc.size, seed=2),
            sa.UniformRandomModel(voc.size, seed=2),
            sa.NoisyOracleModel(train, voc.size, 0.3, seed=2),
        ):
            with self.subTest(model=model):
                self.assertEqual(model.predict("v", 0, 10), model.predict("v", 0, 10))
        constant = sa.ConstantModel(train, voc.size)
        self.assertTrue(constant.predict("v", 0, 10).is_probability)
        with self.assertRaises(sa.ContractError):
            sa.NoisyOracleModel(train, voc.size, 1.5)
        with self.assertRaises(sa.ContractError):
            sa.ConstantModel([], voc.size)

    def testSimulateVideosDefaultHorizon(self):
        voc = grid_vocabulary(2, 2)
        segments = spaced_segments(4, voc, video_id="a") + spaced_segments(2, voc, video_id="b")
        cfg = sa.TimingConfig.from_seconds("2", "1", runtime_ms="500")
        traces = simulate_videos(None, segments, cfg)
        self.assertEqual({"a", "b"}, set(traces))
        last_a = max(s.start for s in group_by_video(segments)["a"])
        self.assertEqual(last_a - cfg.anticipation, traces["a"].horizon)


def ranked_logits(n_classes):
    """logits under which class ``i`` has rank ``i + 1``"""
    return sa.ScoreVector.from_logits(np.arange(n_classes, 0, -1, dtype=float))


class TestMeasures(hta.HarnessAsserts, unittest.TestCase):
    def testHandEnumeratedAccuracy(self):
        v = ranked_logits(10)
        preds = [(v, 1), (v, 6), (v, 0)]
        self.assertAlmostEqual(200 / 3, sa.topk_accuracy(preds, k=5))
        self.assertEqual(sa.round_half_up(sa.topk_accuracy(preds, k=5)), sa.round_half_up("66.67"))

    def testHandEnumeratedMeanRecall(self):
        v = ranked_logits(10)
        reversed_v = sa.ScoreVector.from_logits(np.arange(1, 11, dtype=float))
        preds = [(v, 0), (reversed_v, 0), (v, 1)]
        self.assertAlmostEqual(200 / 3, sa.topk_accuracy(preds))
        self.assertAlmostEqual(75.0, sa.mean_topk_recall(preds))

    def testExtremes(self):
        v = ranked_logits(10)
        self.assertEqual(100.0, sa.topk_accuracy([(v, 0)] * 3))
        self.assertEqual(0.0, sa.topk_accuracy([(v, 5)] * 3))
        self.assertEqual(100.0, sa.mean_topk_recall([(v, 9), (v, 3)], k=10))
        with self.assertRaises(sa.UndefinedResultError):
            sa.topk_accuracy([])
        with self.assertRaises(sa.UndefinedResultError):
            sa.mean_topk_recall([])
        with self.assertRaises(sa.ContractError):
            sa.topk_accuracy([(v, 0)], k=11)
        with self.assertRaises(sa.ContractError):
            sa.topk_accuracy([(v, 10)], k=5)

    def random_preds(self, rng, n, n_classes):
        return [
            (sa.ScoreVector.from_logits(rng.normal(size=n_classes)), int(rng.integers(n_classes)))
            for _ in range(n)
        ]

    def testBalancedSetMacroEqualsMicro(self):
        rng = np.random.default_rng(8)
        preds = [
            (sa.ScoreVector.from_logits(rng.normal(size=12)), cls)
            for cls in range(12)
            for _ in range(7)
        ]
        self.assertAlmostEqual(sa.topk_accuracy(preds), sa.mean_topk_recall(preds), places=9)

    def testMonotoneTransformInvariance(self):
        rng = np.random.default_rng(9)
        preds = self.random_preds(rng, 1000, 20)
        transformed = [(sa.ScoreVector.from_logits(3.0 * v.scores + 1.0), gt) for v, gt in preds]
        softmaxed = [(v.as_probabilities(), gt) for v, gt in preds]
        for measure in (sa.topk_accuracy, sa.mean_topk_recall):
            with self.subTest(measure=measure.__name__):
                self.assertEqual(measure(preds), measure(transformed))
                self.assertEqual(measure(preds), measure(softmaxed))

    def testDuplicationInvariance(self):
        rng = np.random.default_rng(10)
        preds = self.random_preds(rng, 200, 15)
        for measure in (sa.topk_accuracy, sa.mean_topk_recall):
            self.assertAlmostEqual(measure(preds), measure(preds * 3), places=9)

    def testTallyMergeMatchesWhole(self):
        rng = np.random.default_rng(12)
        preds = self.random_preds(rng, 300, 15)
        hits = [bool(v.rank_of(gt) < 5) for v, gt in preds]
        gts = [gt for _, gt in preds]
        whole = sa.TopKTally.from_hits(5, gts, hits)
        parts = [sa.TopKTally.from_hits(5, gts[i::3], hits[i::3]) for i in range(3)]
        merged = parts[2] + parts[0] + parts[1]
        self.assertEqual(whole.accuracy(), merged.accuracy())
        self.assertAlmostEqual(whole.mean_recall(), merged.mean_recall(), places=12)
        self.assertAlmostEqual(sa.mean_topk_recall(preds), whole.mean_recall(), places=12)
        with self.assertRaises(sa.ContractError):
            whole.merge(sa.TopKTally(1))

    def testBalancedAccuracy(self):
        v = ranked_logits(10)
        preds = [(v, 0)] * 5 + [(v, 1)]
        self.assertEqual(100.0, sa.balanced_topk_accuracy(preds, k=5, per_class=50))
        mixed = [(v, 0)] * 9 + [(v, 9)]
        # one class always hit, one never: balanced accuracy is 50 whatever the draw
        self.assertEqual(50.0, sa.balanced_topk_accuracy(mixed, k=5, per_class=50))
        self.assertEqual(90.0, sa.topk_accuracy(mixed, k=5))


class TestBaselines(hta.HarnessAsserts, unittest.TestCase):
    def zipf_segments(self, rng, voc, n):
        weights = 1.0 / np.arange(1, voc.size + 1)
        classes = rng.choice(voc.size, size=n, p=weights / weights.sum())
        return [
            voc.segment("z", i, i + 1, *voc.actions[int(c)])
            for i, c in enumerate(classes)
        ]

    def testConstantBaselineOverestimatesOnLongTail(self):
        rng = np.random.default_rng(21)
        voc = grid_vocabulary(10, 10)
        train = self.zipf_segments(rng, voc, 5000)
        test = self.zipf_segments(rng, voc, 5000)
        result = sa.baseline_scores("constant", train, test, voc, k=5, seed=0)
        accuracy = result["action", "topk_accuracy"]
        recall = result["action", "mean_topk_recall"]
        print(f"constant baseline: top-5 accuracy {accuracy:.2f}, mean top-5 recall {recall:.2f}")
        self.assertGreaterEqual(accuracy, 3 * recall)
        self.assertLessEqual(recall, 500 / result.class_counts["action"] + 1e-9)

    def testRandomBaselineExpectation(self):
        rng = np.random.default_rng(22)
        voc = grid_vocabulary(10, 5)
        test = [
            voc.segment("r", i, i + 1, *voc.actions[int(c)])
            for i, c in enumerate(rng.integers(voc.size, size=10_000))
        ]
        result = sa.baseline_scores("random", [], test, voc, k=5, seed=3)
        self.assertWithinSigma(result["action", "topk_accuracy"] / 100, 5 / voc.size, len(test))

    def testConstantBaselineOnMostFrequentClass(self):
        voc = grid_vocabulary(3, 3)
        train = [voc.segment("t", i, i + 1, 1, 2) for i in range(10)] + [voc.segment("t", 20, 21, 0, 0)]
        test = [voc.segment("u", i, i + 1, 1, 2) for i in range(4)]
        result = sa.baseline_scores("constant", train, test, voc)
        for task in sa.TASKS:
            self.assertEqual(100.0, result[task, "topk_accuracy"])

    def testBaselineErrors(self):
        voc = grid_vocabulary(2, 2)
        test = [voc.segment("u", 0, 1, 0, 0)]
        with self.assertRaises(sa.ContractError):
            sa.baseline_scores("constant", [], test, voc)
        with self.assertRaises(sa.ContractError):
            sa.baseline_scores("median", test, test, voc)


class TestEvaluate(hta.HarnessAsserts, unittest.TestCase):
    def setUp(self):
        self.voc = grid_vocabulary(4, 5)
        self.segments = spaced_segments(40, self.voc, seed=4)
        self.cfg = sa.TimingConfig.from_seconds("2", "1", runtime_ms="100")

    def testPerfectOracleBothModes(self):
        model = sa.OracleModel(self.segments, self.voc.size, anticipation=self.cfg.anticipation)
        for mode in sa.EvaluationMode:
            with self.subTest(mode=mode):
                result = sa.evaluate_model(mode, model, self.segments, self.cfg, self.voc)
                self.assertEqual(0, result.fallback_count)
                for task, measure, value in result.rows():
                    self.assertEqual(100.0, value, msg=f"{mode} {task} {measure}")

    def testStreamingRecordsLeadTime(self):
        model = sa.OracleModel(self.segments, self.voc.size, anticipation=self.cfg.anticipation)
        result = sa.evaluate_model(sa.EvaluationMode.STREAMING, model, self.segments, self.cfg, self.voc)
        leads = [sa.effective_anticipation(s.start, self.cfg) for s in self.segments]
        self.assertAlmostEqual(float(np.mean(leads)) / 1e6, result.mean_effective_anticipation_s)
        self.assertGreaterEqual(result.mean_effective_anticipation_s, 1.0)

    def testZeroAccuracyOracleIsChance(self):
        voc = grid_vocabulary(10, 5)
        segments = spaced_segments(2000, voc, spacing_s=1.0, seed=6)
        model = sa.OracleModel(segments, voc.size, sa.DegradationCurve.constant(0.0), seed=1)
        result = sa.evaluate_model(sa.EvaluationMode.OFFLINE, model, segments, self.cfg, voc)
        self.assertWithinSigma(result["action", "topk_accuracy"] / 100, 5 / voc.size, len(segments))

    def testDegradingOracleScoresLowerStreaming(self):
        curve = sa.DegradationCurve([(0, 1.0), (2_000_000, 0.0)])
        cfg = sa.TimingConfig.from_seconds("2.75", "1", runtime_ms="725")
        model = sa.OracleModel(self.segments, self.voc.size, curve, anticipation=cfg.anticipation, seed=2)
        offline = sa.evaluate_model("offline", model, self.segments, cfg, self.voc)
        streaming = sa.evaluate_model("streaming", model, self.segments, cfg, self.voc)
        self.assertEqual(100.0, offline["action", "topk_accuracy"])
        self.assertLess(streaming["action", "topk_accuracy"], offline["action", "topk_accuracy"])

    def testAllInfeasibleFallsBackToChance(self):
        voc = grid_vocabulary(10, 5)
        segments = spaced_segments(3000, voc, first_s=0.0, spacing_s=0.001, seed=7)
        cfg = sa.TimingConfig.from_seconds("2", "1", runtime_ms="60000")
        model = sa.OracleModel(segments, voc.size, anticipation=cfg.anticipation)
        result = sa.evaluate_model("streaming", model, segments, cfg, voc, fallback_seed=5)
        self.assertEqual(len(segments), result.fallback_count)
        self.assertIsNone(result.mean_effective_anticipation_s)
        self.assertWithinSigma(result["action", "topk_accuracy"] / 100, 5 / voc.size, len(segments))

    def testFallbackWarning(self):
        cfg = sa.TimingConfig.from_seconds("2", "1", runtime_ms="60000")
        model = sa.UniformRandomModel(self.voc.size)
        with hta.reset_harness_context():
            __diag__.enable("warn_on_fallback_predictions")
            with self.assertWarns(UserWarning):
                sa.evaluate_model("streaming", model, self.segments[:2], cfg, self.voc)

    def testOfflineCoverage(self):
        predictions = {
            seg.key: sa.ScoreVector.uniform(self.voc.size) for seg in self.segments[1:]
        }
        with self.assertRaises(sa.CoverageError) as ar:
            sa.evaluate("offline", self.segments, predictions, self.cfg, self.voc)
        self.assertEqual([self.segments[0].key], ar.exception.missing)
        self.assertEqual(2, ar.exception.exit_code)

    def testStreamingCoverage(self):
        with self.assertRaises(sa.CoverageError):
            sa.evaluate("streaming", self.segments, {}, self.cfg, self.voc)

    def testScoresMustMatchVocabulary(self):
        predictions = {seg.key: sa.ScoreVector.uniform(3) for seg in self.segments}
        with self.assertRaises(sa.ContractError):
            sa.evaluate("offline", self.segments, predictions, self.cfg, self.voc)

    def testKCappedPerTask(self):
        voc = sa.Vocabulary([(0, 0), (0, 1), (1, 0), (1, 1), (2, 2), (3, 3)])
        segments = spaced_segments(10, voc)
        model = sa.UniformRandomModel(voc.size)
        result = sa.evaluate_model("offline", model, segments, self.cfg, voc, k=5)
        # 4 verbs, 4 nouns: top-5 covers every class
        self.assertEqual(100.0, result["verb", "topk_accuracy"])
        self.assertEqual(100.0, result["noun", "topk_accuracy"])
        self.assertEqual(4, result.tallies["verb"].k)


class TestRuntimeAwareRanking(unittest.TestCase):
    """a slow model loses more from offline to streaming than a fast one"""

    def setUp(self):
        self.voc = grid_vocabulary(4, 5)
        self.segments = spaced_segments(200, self.voc, spacing_s=4.0, seed=13)

    def scores(self, curve, runtime_ms, seed=0):
        cfg = sa.TimingConfig.from_seconds("2.75", "1", runtime_ms=runtime_ms)
        model = sa.OracleModel(self.segments, self.voc.size, curve, anticipation=cfg.anticipation, seed=seed)
        return [
            sa.evaluate_model(mode, model, self.segments, cfg, self.voc)["action", "mean_topk_recall"]
            for mode in ("offline", "streaming")
        ]

    def testSlowProfileDropsMore(self):
        curve = sa.DegradationCurve([(0, 1.0), (1_000_000, 0.0)])
        fast_offline, fast_streaming = self.scores(curve, "25")
        slow_offline, slow_streaming = self.scores(curve, "725")
        self.assertEqual(fast_offline, slow_offline)
        self.assertGreater(slow_offline - slow_streaming, fast_offline - fast_streaming)

    def testRankingFlips(self):
        slow_sharp = self.scores(sa.DegradationCurve([(0, 1.0), (500_000, 0.0)]), "725")
        fast_flat = self.scores(sa.DegradationCurve.constant(0.6), "25")
        self.assertGreater(slow_sharp[0], fast_flat[0])
        self.assertLess(slow_sharp[1], fast_flat[1])


if __name__ == "__main__":
    unittest.main()
