"""Mixed finite elements for reaction-diffusion systems with a membrane interface."""

