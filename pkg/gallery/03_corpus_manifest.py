"""Build full-sized manifests from placeholder file names.

Manifests only record choices (noise, SNR, offset fraction, audiogram), so
they can be built and counted without any audio on disk. With 4620 clean
utterances, 10% go to validation and each remaining utterance is paired with
two seen patterns of every configuration.
"""
from __future__ import annotations

from collections import Counter

from hasanet.hearing import builtin_pattern_bank
from hasanet.synth import CorpusSplit, build_test_manifest, build_train_manifest

bank = builtin_pattern_bank()
train = build_train_manifest([f"timit/{i:04d}.wav" for i in range(4620)],
                             [f"noise/{i:03d}.wav" for i in range(100)], bank, seed=0)
print({s.value: len(train.split(s)) for s in (CorpusSplit.TRAIN, CorpusSplit.VAL)})
print(Counter(str(bank.get(r.audiogram_id).configuration) for r in train.split(CorpusSplit.TRAIN)))

test = build_test_manifest([f"test/{i:03d}.wav" for i in range(100)],
                           [f"unseen_noise/{i}.wav" for i in range(4)], bank, seed=0)
seen, unseen = test.split(CorpusSplit.TEST_SEEN), test.split(CorpusSplit.TEST_UNSEEN)
print("noisy test utterances:", len({r.noisy_key for r in seen}))
print("TEST_SEEN records:", len(seen), " TEST_UNSEEN records:", len(unseen))
print("first record:", seen[0])
