import numpy as np

from psmlik.model import GlobalParams, PiecewiseDensity


def make_theta(**changes) -> GlobalParams:
    """Reference parameters: uniform f0 and a rising f1 over ten bins of [0, 2]."""
    edges = np.linspace(0.0, 2.0, 11)
    f0 = PiecewiseDensity(edges, np.full(10, 0.1))
    f1 = PiecewiseDensity(edges, np.arange(1, 11) / 55.0)
    theta = GlobalParams(sigma=0.39, beta=2.97, f0=f0, f1=f1, w=2.0, r=1000.0)
    return theta.replace(**changes) if changes else theta
