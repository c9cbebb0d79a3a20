"""HAR inference under nonstationarity: HAC and fixed-b long-run variances,
local LRV curves, simulated non-pivotal fixed-b limits and a Monte Carlo
harness for size, power and ERP studies."""

__version__ = "0.1.0"
