"""Near-field source localization for uniform linear arrays.

The coarse-to-fine localizer (:func:`localize`) clusters the FFT angle
spectrum, bounds each cluster's range with beamformer scans and runs 2D-MUSIC
only inside those windows. :func:`music_2d_localize` is the full-grid baseline.
"""

from .array import (SPEED_OF_LIGHT, ArrayGeometry, Source, SourceTruth, analytic_covariance,
                    element_positions, snr_to_noise_var, source_element_distance,
                    source_steering, steering_matrix, steering_vector, synthesize_snapshots)
from .errors import (ConfigError, DegenerateSubspaceWarning, GeometryError, GridError,
                     NearFieldError, NoSourcesVisibleError)
from .localizer import (AngleCluster, Diagnostics, DistanceCluster, Estimate, LocalizationResult,
                        LocalizerConfig, angle_clusters, distance_cluster, expand_distance_cluster,
                        localize, localize_covariance, music_2d_localize,
                        music_2d_localize_covariance)
from .music import (Axis, GridSpec, Spectrum2D, beamform_distance_scan, find_peaks,
                    music_1d_angle, music_1d_distance, music_2d, music_spectrum, peaks_2d)
from .spectral import (AngleSpectrum, SubspaceDecomposition, angle_spectrum, bin_angles,
                       bin_to_angle, decompose, sample_covariance)

__version__ = "0.1.0"
