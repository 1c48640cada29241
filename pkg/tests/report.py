"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
import functools
import time

LINES: list[str] = []


def criterion(number: int, title: str, budget: float):
    """Time the wrapped test, record its verdict and re-raise any failure.

    A criterion that passes its assertions but overruns ``budget`` seconds
    is recorded and raised as a failure.
    """
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            detail, error = "", None
            try:
                detail = fn(*args, **kwargs) or ""
            except BaseException as e:  # noqa: BLE001 - re-raised below
                error = e
            elapsed = time.perf_counter() - t0
            slow = error is None and elapsed >= budget
            verdict = "PASS" if error is None and not slow else "FAIL"
            reason = f"  [{type(error).__name__}: {str(error).splitlines()[0] if str(error) else ''}]" if error else ""
            if slow:
                reason = f"  [over budget {budget:g} s]"
            LINES.append(f"{verdict}  criterion {number:2d}  {title}  ({elapsed:.2f} s){'  ' + detail if detail else ''}"
                         f"{reason}")
            print(LINES[-1])
            if error is not None:
                raise error
            if slow:
                raise AssertionError(f"criterion {number} took {elapsed:.2f} s, budget {budget:g} s")
        return run
    return wrap
