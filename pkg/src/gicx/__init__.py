"""Generative image compression.

An image is stored as two entropy-coded payloads: a small learned
embedding found by optimizing against a frozen denoiser, and a 4x
downsampled guidance image. Decompression runs guided diffusion sampling
conditioned on both.
"""

from .coding import (GUIDANCE_FACTOR, QuantizerSpec, RangeModel, dequantize,
                     pool_guidance, quantize, range_decode, range_encode,
                     spec_for_range)
from .config import PRESETS, RunConfig, make_config, parse_config_file, resolve_config
from .container import (FILE_EXTENSION, Bitstream, BitstreamHeader, BitrateReport,
                        bitrate_report, bitrate_report_for_dir, bits_per_pixel,
                        pack_bitstream, unpack_bitstream)
from .dataset import (ToyDatasetSpec, generate_toy_dataset, load_dataset, read_ppm,
                      save_dataset, write_ppm)
from .diffusion import (NoiseSchedule, SamplerConfig, ddim_sigma, ddim_step,
                        ddpm_posterior_mean, make_schedule, predict_x0, q_sample,
                        sample_loop, timestep_grid)
from .errors import (ContractError, DecodeError, DimensionError, FormatError,
                     GicxError, NumericError, ParameterError)
from .guidance import (GuidanceConfig, GuidanceProxy, cfg_combine,
                       compression_gradient, fold_gradient_into_eps, guidance_loss,
                       guided_denoise_fn, perturb_mean)
from .inversion import (EmbeddingMatrix, InversionConfig, InversionResult,
                        UtilityReport, embedding_utility_check, invert_embedding,
                        straight_through_quantize, write_loss_log)
from .metrics import QualityReport, psnr, ssim
from .network import (NULL_CONDITION, Checkpoint, DenoiserNet, LatentCodec,
                      LatentStats, NetConfig, NullCondition, predict_noise,
                      train_autoencoder, train_denoiser)
from .pipeline import (CompressResult, DecompressResult, GenerativeImageCodec,
                       compress_image, decompress_stream, train_checkpoint,
                       validate_image)
from .tensor import (Adam, Tensor, backward, no_grad, read_snapshot, snapshot_bytes,
                     snapshot_from_bytes, write_snapshot)

__version__ = "0.1.0"

__all__ = [
    "Adam", "Bitstream", "BitstreamHeader", "BitrateReport", "Checkpoint",
    "CompressResult", "ContractError", "DecodeError", "DecompressResult",
    "DenoiserNet", "DimensionError", "EmbeddingMatrix", "FILE_EXTENSION",
    "FormatError", "GUIDANCE_FACTOR", "GenerativeImageCodec", "GicxError",
    "GuidanceConfig", "GuidanceProxy", "InversionConfig", "InversionResult",
    "LatentCodec", "LatentStats", "NULL_CONDITION", "NetConfig", "NoiseSchedule",
    "NullCondition", "NumericError", "PRESETS", "ParameterError", "QualityReport",
    "QuantizerSpec", "RangeModel", "RunConfig", "SamplerConfig", "Tensor",
    "ToyDatasetSpec", "UtilityReport", "backward", "bitrate_report",
    "bitrate_report_for_dir", "bits_per_pixel", "cfg_combine", "compress_image",
    "compression_gradient", "ddim_sigma", "ddim_step", "ddpm_posterior_mean",
    "decompress_stream", "dequantize", "embedding_utility_check",
    "fold_gradient_into_eps", "generate_toy_dataset", "guidance_loss",
    "guided_denoise_fn", "invert_embedding", "load_dataset", "make_config",
    "make_schedule", "no_grad", "pack_bitstream", "parse_config_file",
    "perturb_mean", "pool_guidance", "predict_noise", "predict_x0", "psnr",
    "q_sample", "quantize", "range_decode", "range_encode", "read_ppm",
    "read_snapshot", "resolve_config", "sample_loop", "save_dataset",
    "snapshot_bytes", "snapshot_from_bytes", "spec_for_range", "ssim",
    "straight_through_quantize", "timestep_grid", "train_autoencoder",
    "train_checkpoint", "train_denoiser", "unpack_bitstream", "validate_image",
    "write_loss_log", "write_ppm", "write_snapshot",
]
