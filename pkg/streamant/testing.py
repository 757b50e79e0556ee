# testing.py

from contextlib import contextmanager
import math
import typing

import numpy as np

from .core import ScoreVector, __diag__
from .exceptions import HarnessBaseException


class harness_test:
    """
    namespace class for classes useful in writing unit tests
    """

    class reset_harness_context:
        """
        Context manager to be used when writing unit tests that modify
        harness diagnostics (``__diag__`` settings).

        Example::

            with reset_harness_context():
                __diag__.enable("warn_on_rejected_rows")
                with self.assertWarns(UserWarning):
                    load_annotations(path)

            # after exiting the context manager, diagnostics are as before
        """

        def __init__(self):
            self._save_context = {}

        def save(self):
            self._save_context["__diag__"] = {
                name: getattr(__diag__, name) for name in __diag__._all_names
            }
            return self

        def restore(self):
            for name, value in self._save_context["__diag__"].items():
                (__diag__.enable if value else __diag__.disable)(name)
            return self

        def copy(self):
            ret = type(self)()
            ret._save_context.update(self._save_context)
            return ret

        def __enter__(self):
            return self.save()

        def __exit__(self, *args):
            self.restore()

    class HarnessAsserts:
        """
        A mixin class to add score and gradient assertion methods to normal
        unittest.TestCase classes.
        """

        def assertScoresClose(self, scores, expected, tol=1e-9, msg=None):
            """
            Compare a :class:`ScoreVector` (or array) elementwise with
            ``expected``; ``-inf`` entries must match exactly.
            """
            actual = scores.scores if isinstance(scores, ScoreVector) else np.asarray(scores)
            expected = np.asarray(expected, dtype=np.float64)
            self.assertEqual(expected.shape, actual.shape, msg=msg)
            self.assertTrue(
                np.array_equal(np.isneginf(actual), np.isneginf(expected)),
                msg=msg or f"-inf entries differ: {actual} != {expected}",
            )
            finite = ~np.isneginf(expected)
            self.assertTrue(
                np.allclose(actual[finite], expected[finite], rtol=0.0, atol=tol),
                msg=msg or f"{actual} != {expected}",
            )

        def assertTopK(self, scores, k, expected_indices, msg=None):
            """assert the ordered top-``k`` class indices of a score vector"""
            self.assertEqual(list(expected_indices), [int(i) for i in scores.topk(k)], msg=msg)

        def assertWithinSigma(self, observed, expected, n, sigmas=3.0, msg=None):
            """
            Assert that a proportion ``observed`` over ``n`` Bernoulli trials
            lies within ``sigmas`` standard deviations of ``expected``.
            """
            sigma = math.sqrt(max(expected * (1.0 - expected), 1e-12) / n)
            self.assertLessEqual(
                abs(observed - expected),
                sigmas * sigma,
                msg=msg or f"{observed} not within {sigmas} sigma of {expected} (n={n})",
            )

        def assertGradientMatches(
            self,
            f: typing.Callable[[np.ndarray], typing.Tuple[float, np.ndarray]],
            x: np.ndarray,
            tol: float = 1e-4,
            msg=None,
        ):
            """
            Check the analytic gradient returned by ``f`` against central
            differences at ``x``.
            """
            from .distill import gradient_check

            err = gradient_check(f, x)
            self.assertLess(err, tol, msg=msg or f"relative gradient error {err:.3e}")

        @contextmanager
        def assertRaisesHarnessException(self, exc_type=HarnessBaseException, msg=None):
            with self.assertRaises(exc_type, msg=msg):
                yield
