"""Run every bundled experiment config (or the ones named) and render figures.

Usage: python run_experiment.py [configs/theophylline.json ...]
"""
import sys
from pathlib import Path

from langevin_saem.cli import main as cli_main
from langevin_saem.config import load_config
from langevin_saem.data import load_csv

CONFIG_DIR = Path('configs')


def verify_data():
    """Check the bundled Theophylline table before any run."""
    try:
        ds = load_csv('data/theophylline.csv', 'theophylline')
    except Exception as e:
        print(f"Error verifying bundled data: {str(e)}")
        return False
    counts = ds.frame.groupby('patient').size()
    if ds.n_units != 12 or not (counts == 10).all():
        print(f"Unexpected Theophylline layout: {ds.n_units} patients, rows per patient {counts.tolist()}")
        return False
    print(f"Data verification successful: {ds.n_units} patients, {len(ds)} measurements")
    return True


def main(paths):
    if not verify_data():
        return 2
    configs = [Path(p) for p in paths] or sorted(CONFIG_DIR.glob('*.json'))
    status = 0
    for path in configs:
        print(f"\nRunning {path} ...")
        code = cli_main(['run', str(path)])
        if code != 0:
            print(f"{path} finished with exit code {code}")
            status = status or code
            continue
        cli_main(['plot', str(load_config(path).output_path())])
    return status


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
