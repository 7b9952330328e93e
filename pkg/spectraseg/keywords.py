from dataclasses import dataclass


@dataclass
class ConfigKW:
    COMMAND = "command"
    PATH_OUTPUT = "path_output"
    LOG_FILE = "log_file"
    DEBUGGING = "debugging"
    SEED = "seed"
    N_JOBS = "n_jobs"
    SCALE = "scale"
    DATASET = "dataset"
    SYNTHETIC = "synthetic"
    PREPROCESSING = "preprocessing"
    SUPERPIXEL = "superpixel"
    MODEL = "model"
    TRAINING_PARAMETERS = "training_parameters"
    LOADER_PARAMETERS = "loader_parameters"
    SPLIT_DATASET = "split_dataset"
    EVALUATION_PARAMETERS = "evaluation_parameters"
    RANKING = "ranking"
    DATASIZE_STUDY = "datasize_study"


@dataclass
class DatasetKW:
    PATH_DATA: str = "path_data"
    PATH_INDEX: str = "path_index"
    PATH_PREDICTIONS: str = "path_predictions"
    PATH_REANNOTATIONS: str = "path_reannotations"
    PATH_THRESHOLDS: str = "path_thresholds"
    PATH_SPLIT: str = "path_split"


@dataclass
class SynthKW:
    N_SUBJECTS: str = "n_subjects"
    IMAGES_PER_SUBJECT: str = "images_per_subject"
    N_CLASSES: str = "n_classes"
    WIDTH: str = "width"
    HEIGHT: str = "height"
    SHIFT_SCALE: str = "shift_scale"
    NOISE_STD: str = "noise_std"
    SPATIAL_NOISE_STD: str = "spatial_noise_std"
    BLOB_RANGE: str = "blob_range"
    REANNOTATE: str = "reannotate"


@dataclass
class PreprocessingKW:
    L1_NORMALIZE: str = "l1_normalize"
    MEDIAN_FILTER: str = "median_filter"
    FILTER_FIRST: str = "filter_first"
    ALL_MODALITIES: str = "all_modalities"


@dataclass
class SuperpixelKW:
    N_SEGMENTS: str = "n_segments"
    MAX_NUM_ITER: str = "max_num_iter"
    SIGMA: str = "sigma"
    CONVERT2LAB: str = "convert2lab"
    CROP_SIZE: str = "crop_size"


@dataclass
class ModelParamsKW:
    KINDS: str = "kinds"
    MODALITIES: str = "modalities"
    BASE_CHANNELS: str = "base_channels"
    DROPOUT: str = "dropout"
    BN_MOMENTUM: str = "bn_momentum"


@dataclass
class TrainingParamsKW:
    EPOCHS: str = "epochs"
    BATCH_SIZE: str = "batch_size"
    EPOCH_SIZE: str = "epoch_size"
    LEARNING_RATE: str = "learning_rate"
    GAMMA: str = "gamma"
    BETA1: str = "beta1"
    BETA2: str = "beta2"
    EPSILON: str = "epsilon"
    SWA_START: str = "swa_start"
    CLASS_WEIGHTS: str = "class_weights"
    LOSS: str = "loss"
    AUGMENTATION: str = "augmentation"


@dataclass
class AugmentationKW:
    APPLIED: str = "applied"
    PROBABILITY: str = "probability"
    SHIFT_LIMIT: str = "shift_limit"
    SCALE_LIMIT: str = "scale_limit"
    ROTATE_LIMIT: str = "rotate_limit"
    FLIP: str = "flip"


@dataclass
class LoaderParamsKW:
    N_WORKERS: str = "n_workers"
    BUFFER_CAPACITY: str = "buffer_capacity"
    PATH_COUNTERS: str = "path_counters"


@dataclass
class SplitDatasetKW:
    K_FOLDS: str = "k_folds"
    N_TEST: str = "n_test"
    RANDOM_SEED: str = "random_seed"
    N_CANDIDATES: str = "n_candidates"


@dataclass
class EvaluationParamsKW:
    THRESHOLD_AGGREGATION: str = "threshold_aggregation"
    DISTANCE_CUTOVER: str = "distance_cutover"
    ENSEMBLE: str = "ensemble"


@dataclass
class RankingKW:
    N_BOOT: str = "n_boot"
    SAMPLE_SIZE: str = "sample_size"
    SEED: str = "seed"
    METRICS: str = "metrics"


@dataclass
class DataSizeKW:
    SIZES: str = "sizes"
    REPEATS: str = "repeats"
    CLASSES: str = "classes"


@dataclass
class MetricsKW:
    DSC: str = "dsc"
    ASD: str = "asd"
    NSD: str = "nsd"


@dataclass
class ModalityKW:
    HSI: str = "HSI"
    TPI: str = "TPI"
    RGB: str = "RGB"


@dataclass
class KindKW:
    PIXEL: str = "pixel"
    SUPERPIXEL: str = "superpixel"
    PATCH_32: str = "patch_32"
    PATCH_64: str = "patch_64"
    IMAGE: str = "image"


@dataclass
class IndexKW:
    SUBJECTS: str = "subjects"
    SUBJECT: str = "subject"
    IMAGES: str = "images"
    IMAGE_ID: str = "image_id"
    CUBE: str = "cube"
    LABEL: str = "label"
    MODALITIES: str = "modalities"
    CLASS_TABLE: str = "class_table"
