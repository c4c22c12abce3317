from avs.iqa.niqe import NIQEModel, ggd_fit, mscn, niqe_fit, niqe_score
from avs.iqa.ssim import (SSIMConfig, SSIMMap, psnr, ssim, ssim_backward, ssim_map,
                          ssim_value_and_grad)

__all__ = ["NIQEModel", "SSIMConfig", "SSIMMap", "ggd_fit", "mscn", "niqe_fit",
           "niqe_score", "psnr", "ssim", "ssim_backward", "ssim_map", "ssim_value_and_grad"]
