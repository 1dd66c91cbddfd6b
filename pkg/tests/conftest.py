"""Suite-wide instrumentation.

Every d.c. fit made in this process is routed through a recorder that counts
outer-iteration objective increases larger than ``DESCENT_SLACK``; every
cross-validation result is checked for ``lambda_1se >= lambda_min``. The
acceptance module runs last, and its suite-wide checks run after everything
else, so they see every fit of the session.
"""
import functools

import numpy as np
import pytest

import iitr.pipeline
import iitr.solvers

DESCENT_SLACK = 1e-8


class TraceRecorder:
    def __init__(self):
        self.fits = 0
        self.violations = []
        self.cv_results = 0
        self.cv_violations = []
        self.acceptance = {}

    def record(self, trace):
        self.fits += 1
        steps = np.diff(np.asarray(trace, dtype=float))
        if steps.size and steps.max() > DESCENT_SLACK:
            self.violations.append(float(steps.max()))

    def record_cv(self, cv):
        self.cv_results += 1
        if not cv.lambda_1se >= cv.lambda_min:
            self.cv_violations.append((cv.lambda_min, cv.lambda_1se))


RECORDER = TraceRecorder()


def _wrap(module, name, hook):
    original = getattr(module, name)
    if getattr(original, "_recorded", False):
        return

    @functools.wraps(original)
    def recorded(*args, **kwargs):
        result = original(*args, **kwargs)
        hook(result)
        return result

    recorded._recorded = True
    setattr(module, name, recorded)


def _install():
    _wrap(iitr.solvers, "dc_fit", lambda r: RECORDER.record(r.objective_trace))
    _wrap(iitr.pipeline, "cv_path", RECORDER.record_cv)


def pytest_configure(config):
    _install()


def pytest_collection_modifyitems(session, config, items):
    # Stable sort: acceptance last, and its suite-wide checks very last.
    items.sort(key=lambda it: ("test_acceptance.py" in it.nodeid,
                               "suite_wide" in it.name))


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    if RECORDER.fits:
        tr.write_line(f"[d.c. descent] {RECORDER.fits} fits recorded, "
                      f"{len(RECORDER.violations)} violations")
    if RECORDER.acceptance:
        tr.section("acceptance criteria")
        for key in sorted(RECORDER.acceptance):
            tr.write_line(RECORDER.acceptance[key])


@pytest.fixture
def trace_recorder():
    return RECORDER
