"""Physical vulnerability evaluation pipeline for a small vision-driven
manipulation policy: OOD corruptions, typographic distractors, and
optimized adversarial patches, measured as episode failure rates."""

from .datasets import (
    DataBundle,
    expert_action,
    gen_general,
    gen_robotic,
    merge_bundles,
    read_bundle,
    write_bundle,
)
from .harness import (
    DEFAULT_CONFIG,
    AttackConfig,
    Cell,
    EvalReport,
    build_attack_grid,
    evaluate,
    make_transform,
    parse_config,
    read_report,
    write_report,
)
from .imgcore import (
    PpmError,
    SeededRng,
    check_image,
    derive_seed,
    new_image,
    read_ppm,
    write_ppm,
)
from .nnmodel import (
    PolicyArch,
    PolicyNet,
    accuracy,
    backward,
    forward,
    init_params,
    input_gradient,
    load_checkpoint,
    loss_ce,
    one_hot,
    predict_batch,
    save_checkpoint,
    sgd_step,
    train,
)
from .patchopt import (
    THREAT_LEVELS,
    PatchOptConfig,
    optimize_patch,
    resolve_threat,
    targeted_success,
    transfer_attack,
)
from .perturb import (
    BlurParams,
    BrightnessParams,
    NoiseParams,
    PatchSpec,
    TypoSpec,
    add_gaussian_noise,
    adjust_brightness,
    apply_patch,
    blur,
    gaussian_kernel,
    read_patch,
    render_typography,
    write_patch,
)
from .tabletop import (
    MAX_STEPS,
    NUM_ACTIONS,
    TASKS,
    EpisodeRecord,
    TabletopState,
    Task,
    failure_rate,
    gen_scene,
    mean_timesteps,
    read_episodes_csv,
    render,
    run_episode,
    step,
    task_success,
    write_episodes_csv,
)

__version__ = "0.1.0"
