import os
import sys
import tempfile
import unittest
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from acceptance import (  # noqa: E402
    QUICK, AcceptanceFailure, Check, Context, check_fhat_table, check_homogenization_slope, check_leading_saturation,
    check_nonpositive_alpha, check_saturation_shortcut, verify,
)
from cellproblem import FhatTable  # noqa: E402
from scenario import Settings, env_flag  # noqa: E402

SLOW = env_flag("GL_SLOW")


class QuickChecksTest(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.ctx = Context(Settings(cache_dir=Path(self.tmp.name)))

    def tearDown(self):
        self.tmp.cleanup()

    def test_cheap_checks_pass(self):
        for fn in (check_saturation_shortcut, check_nonpositive_alpha, check_leading_saturation,
                   check_homogenization_slope):
            check = fn(self.ctx)
            self.assertTrue(check.passed, f"{check.name}: {check.detail}")

    def test_fhat_table_check_reads_raw_estimates(self):
        b = [0.2, 0.4, 0.6, 0.8]
        self.ctx._table = FhatTable(b, [0.1, 0.2, 0.3, 0.4])
        self.assertTrue(check_fhat_table(self.ctx).passed)
        self.ctx._table = FhatTable(b, [0.1, 0.15, 0.15, 0.4], raw=[0.1, 0.3, 0.15, 0.4])
        check = check_fhat_table(self.ctx)
        self.assertFalse(check.passed)
        self.assertEqual(len(check.detail["raw_drops"]), 1)
        self.ctx._table = FhatTable(b, [0.1, 0.2, 0.3, 0.4], raw=[0.1, 0.2, 0.3, 0.6])
        self.assertFalse(check_fhat_table(self.ctx).passed)

    def test_failure_names_the_checks(self):
        exc = AcceptanceFailure([Check("theta0", False), Check("lambda0", False)])
        self.assertEqual(str(exc), "acceptance failed: theta0, lambda0")
        self.assertEqual(len(exc.failed), 2)


@unittest.skipUnless(SLOW, "set GL_SLOW=1 for the quick acceptance suite")
class QuickSuiteSlowTest(unittest.TestCase):

    def test_verify_quick(self):
        with tempfile.TemporaryDirectory() as tmp:
            checks = verify(settings=Settings(cache_dir=Path(tmp)))
        self.assertEqual(len(checks), len(QUICK))


if __name__ == "__main__":
    unittest.main()
