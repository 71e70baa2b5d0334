from data.dataset import (
    CaptionRecord,
    FeatureFile,
    load_dataset,
    parse_feature_file,
    read_feature_file,
    read_records,
    split,
    write_records,
)
from data.toy import make_toy_corpus
