"""Train the toy denoiser recorded in configs/toy_train.json.

Writes artifacts/toy_denoiser.nfck and artifacts/toy_train_loss.csv, plus an
intermediate checkpoint every 1000 steps.
"""

import sys
from functools import partial

from nocs_forge.toy import TOY_CHECKPOINT, train_toy


def main() -> int:
    train_toy(TOY_CHECKPOINT, log=partial(print, flush=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
