"""Regenerate the toy corpus files shipped in src/recosa/data/."""

from pathlib import Path

from recosa.experiments import toy_corpus, write_corpus

DATA = Path(__file__).resolve().parents[1] / "src" / "recosa" / "data"

if __name__ == "__main__":
    train, valid = toy_corpus()
    write_corpus(train, DATA / "toy_train.txt", DATA / "toy_train_labels.txt")
    write_corpus(valid, DATA / "toy_valid.txt", DATA / "toy_valid_labels.txt")
    print(f"wrote {len(train)} train / {len(valid)} valid sessions to {DATA}")
