"""Train the CNN and both baselines on one noisy synthetic scene.

Pass a number of epochs as the first argument (default 100) to trade run
time for accuracy; the acceptance suite uses 250.
"""

import sys
import time

from subpixel.benchmark import synthetic_comparison

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100

t0 = time.perf_counter()
result = synthetic_comparison(seed=1, noise_fraction=0.1, n_train=1200, epochs=epochs, n_trees=50)
print(f"split sizes train/val/test: {result.split_sizes}, noise sd {result.noise_sd:.4f}")
print(f"{'model':<6} {'MAE% bu':>8} {'MAE% veg':>9} {'RMSE% bu':>9} {'RMSE% veg':>10}")
for name in result.metrics:
    mae, rmse = result.mae(name), result.rmse(name)
    print(f"{name:<6} {mae[0]:8.2f} {mae[1]:9.2f} {rmse[0]:9.2f} {rmse[1]:10.2f}")
print(f"{time.perf_counter() - t0:.0f}s")
