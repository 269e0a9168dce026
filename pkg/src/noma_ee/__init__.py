"""Robust worst-case energy-efficiency maximization for MC MISO-NOMA downlinks.

Library layout:

* :mod:`noma_ee.network` -- scenario config, topologies, uncertain channels
* :mod:`noma_ee.robust` -- closed-form and exact worst-case SINR bounds
* :mod:`noma_ee.metrics` -- rates, power, EE and the constraint validator
* :mod:`noma_ee.convexify` -- the inner convex subproblem of one SCA step
* :mod:`noma_ee.conic_bridge` -- conic solver seam
* :mod:`noma_ee.matching` -- two-stage many-to-many scheduling matcher
* :mod:`noma_ee.solvers` -- Dinkelbach/SCA drivers and baselines
* :mod:`noma_ee.experiments` -- sweep harness and figure emission
"""

from .network import (ChannelSet, NetworkConfig, Topology, desk_config,
                      generate_channels, generate_topology, table2_config)
from .robust import RobustMode

__all__ = [
    "ChannelSet", "NetworkConfig", "Topology", "RobustMode",
    "desk_config", "generate_channels", "generate_topology", "table2_config",
]

__version__ = "0.1.0"
