"""File formats for panels, coefficients and run manifests."""
