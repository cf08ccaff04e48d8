"""On-demand image-classification dataset formulation.

Class labels go in; prompts are generated, a text-to-image backend renders
them, optional noise post-processing is applied, and the result is written
as a class-per-folder dataset with a JSON manifest. The audit tools measure
the diversity of any such dataset with pairwise SSIM and colorfulness.
"""

__version__ = "0.1.0"
