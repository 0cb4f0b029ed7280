import sys
from pathlib import Path

from src.services.scenario_runner import bundled_path, list_bundled, run_batch

# dumbbell_neck is measured-only and slow; run it explicitly when needed
ACCEPTANCE = ["sphere_n2", "circle_n1", "ellipse_n1", "shrinker_cylinder", "perturbed_cylinder",
              "spectral_suite", "frequency_suite"]


def acceptance_run(output_root: str = "runs/acceptance", threads: int = 4) -> int:
    """
    Run the bundled acceptance scenarios and print one verdict line per check.

    Returns:
        int: The worst scenario exit code.
    """
    missing = sorted(set(ACCEPTANCE) - set(list_bundled()))
    if missing:
        print(f"❌ Missing bundled scenarios: {missing}")
        return 2

    reports = run_batch([bundled_path(name) for name in ACCEPTANCE], Path(output_root), threads=threads)
    for report in reports:
        status = "✅" if report.passed else "❌"
        print(f"{status} {report.scenario}")
        for check in report.checks:
            print(f"    {check.verdict:>8}  {check.name}  value={check.value}  threshold={check.threshold}")
    return max(r.exit_code for r in reports)


if __name__ == "__main__":
    sys.exit(acceptance_run())
