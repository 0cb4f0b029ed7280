from pathlib import Path

import numpy as np

from src.services.arrival_time import GridConfig, compute_arrival
from src.services.shapes import circle, sphere
from src.utils.fitting import fit_power_law
from src.utils.io import write_table


def arrival_error(surface, spacing: float, inner_fraction: float = 0.8) -> float:
    """
    Relative sup error of the computed arrival time against -|x|^2 / (2n)
    on the inner part of a unit sphere.

    Args:
        surface: Unit round sphere (or circle).
        spacing (float): Grid spacing h.
        inner_fraction (float): Cells with |x| <= inner_fraction are compared.
    """
    field = compute_arrival(surface, GridConfig(spacing=spacing))
    dist2 = np.sum(field.coordinates ** 2, axis=-1)
    inner = field.mask & (np.sqrt(dist2) <= inner_fraction)
    exact = -dist2[inner] / (2.0 * field.n)
    return float(np.max(np.abs(field.values[inner] - exact)) / np.max(np.abs(exact)))


def refinement_study(spacings=(1 / 16, 1 / 32, 1 / 64, 1 / 128), output_dir: str = "runs/refinement"):
    """
    Measure the convergence order of the arrival-time solver on the unit circle
    and the unit 2-sphere and write one table per shape.

    Args:
        spacings (tuple): Grid spacings, coarse to fine.
        output_dir (str): Destination directory for the CSV tables.
    """
    output_dir = Path(output_dir)
    shapes = {"circle_n1": circle(1.0, 512), "sphere_n2": sphere(2, 1.0, 513)}
    for name, surface in shapes.items():
        rows = []
        for h in spacings:
            err = arrival_error(surface, h)
            rows.append({"spacing": h, "relative_error": err})
            print(f"✅ {name}: h = {h:.5f}, relative error {err:.3e}")
        fit = fit_power_law(np.array(spacings), np.array([r["relative_error"] for r in rows]))
        write_table(rows, output_dir / f"{name}.csv")
        print(f"📊 {name}: observed order {fit.exponent:.2f} "
              f"(95% CI {fit.confidence_interval[0]:.2f}..{fit.confidence_interval[1]:.2f})")


# Main execution
if __name__ == "__main__":
    refinement_study()
