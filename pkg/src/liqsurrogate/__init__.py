"""Global liquefaction surrogate modelling: CPT mechanics, response curves,
tree-ensemble surrogates, geostatistical updating and forward prediction."""

__version__ = "0.1.0"
