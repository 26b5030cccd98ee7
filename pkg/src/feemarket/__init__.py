"""Online price controllers for multidimensional blockchain fee markets.

Modules: ``core`` (block data), ``losses`` (network losses and conjugates),
``packing`` (exact block building), ``controllers`` (choice-function price
rules), ``adversaries`` (block generators), ``simulation`` (price loop),
``evaluation`` (regret and bound checks), ``cli`` (command-line driver).
"""

__version__ = "0.1.0"
