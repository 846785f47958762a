"""Download the public count and UCI datasets and convert them to the bundled schemas.

Usage: python -m scripts.download_datasets [name ...]   (default: all)
"""
import io
import json
import logging
import sys
from pathlib import Path

import pandas as pd
import requests
from scipy.io import arff

from langevin_saem.errors import DataError

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s',
    stream=sys.stderr
)
logger = logging.getLogger(__name__)

RAW_DIR = Path('data/raw')
TIMEOUT = 60

SOURCES = {
    'medpar': 'https://vincentarelbundock.github.io/Rdatasets/csv/COUNT/medpar.csv',
    'azpro': 'https://vincentarelbundock.github.io/Rdatasets/csv/COUNT/azpro.csv',
    'german': 'https://archive.ics.uci.edu/ml/machine-learning-databases/statlog/german/german.data',
    'phishing': 'https://archive.ics.uci.edu/ml/machine-learning-databases/00327/Training%20Dataset.arff',
    'caravan': 'https://archive.ics.uci.edu/ml/machine-learning-databases/tic-mld/ticdata2000.txt',
}

GERMAN_COLUMNS = [
    'status', 'duration', 'credit_history', 'purpose', 'amount', 'savings', 'employment_duration',
    'installment_rate', 'personal_status_sex', 'other_debtors', 'present_residence', 'property', 'age',
    'other_installment_plans', 'housing', 'number_credits', 'job', 'people_liable', 'telephone',
    'foreign_worker', 'credit_risk',
]


def fetch(session: requests.Session, url: str) -> bytes:
    try:
        response = session.get(url, timeout=TIMEOUT)
        response.raise_for_status()
    except requests.RequestException as e:
        raise DataError(f"could not fetch {url}: {e}")
    logger.debug(f"Response status: {response.status_code}, {len(response.content)} bytes")
    return response.content


def convert_count(name, payload):
    df = pd.read_csv(io.BytesIO(payload))
    return df.drop(columns=[c for c in df.columns if c.startswith('Unnamed') or c == 'rownames'])


def convert_german(payload):
    df = pd.read_csv(io.BytesIO(payload), sep=r'\s+', header=None, names=GERMAN_COLUMNS)
    # 1 = good, 2 = bad credit
    df['credit_risk'] = (df['credit_risk'] == 2).astype(int)
    return df


def convert_phishing(payload):
    data, _ = arff.loadarff(io.StringIO(payload.decode('utf-8')))
    df = pd.DataFrame(data)
    for col in df.columns:
        df[col] = df[col].str.decode('utf-8').astype(int)
    df['Result'] = (df['Result'] == 1).astype(int)
    return df


def convert_caravan(payload):
    schema = json.loads(Path('data/schemas/caravan.json').read_text())
    names = schema['categorical'] + [schema['response']]
    return pd.read_csv(io.BytesIO(payload), sep='\t', header=None, names=names)


def download_dataset(name, session=None, raw_dir=RAW_DIR):
    session = session or requests.Session()
    logger.info(f"Downloading {name} from {SOURCES[name]}")
    payload = fetch(session, SOURCES[name])
    try:
        if name in ('medpar', 'azpro'):
            df = convert_count(name, payload)
        elif name == 'german':
            df = convert_german(payload)
        elif name == 'phishing':
            df = convert_phishing(payload)
        else:
            df = convert_caravan(payload)
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise DataError(f"could not convert {name}: {e}")
    raw_dir = Path(raw_dir)
    raw_dir.mkdir(parents=True, exist_ok=True)
    out = raw_dir / f'{name}.csv'
    df.to_csv(out, index=False)
    logger.info(f"Saved {out}: {len(df)} records, {len(df.columns)} columns")
    return out


def main(names, raw_dir=RAW_DIR):
    names = names or list(SOURCES)
    session = requests.Session()
    failed = []
    for name in names:
        if name not in SOURCES:
            logger.error(f"Unknown dataset {name}; choose from {sorted(SOURCES)}")
            failed.append(name)
            continue
        try:
            download_dataset(name, session, raw_dir)
        except DataError as e:
            logger.error(f"Error downloading {name}: {str(e)}")
            failed.append(name)
    if failed:
        logger.warning(f"Failed: {', '.join(failed)}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
