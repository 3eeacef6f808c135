"""Calibration pilot for the two-stage zero-shot experiment."""

import argparse
import time

import numpy as np

from crossconst.bpe import MiniBpe
from crossconst.corpus import SynthSpec, english_centric_pairs, generate_synthetic_corpus
from crossconst.decoding import BeamConfig
from crossconst.evaluation import evaluate_run, export_representations, parallel_cosine
from crossconst.model import ModelConfig
from crossconst.trainer import TrainConfig, run_stage


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sentences", type=int, default=1200)
    ap.add_argument("--pretrain-steps", type=int, default=400)
    ap.add_argument("--finetune-steps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--warmup", type=int, default=200)
    ap.add_argument("--max-tokens", type=int, default=2048)
    ap.add_argument("--merges", type=int, default=200)
    ap.add_argument("--d-model", type=int, default=64)
    ap.add_argument("--dropout", type=float, default=0.1)
    ap.add_argument("--alpha", type=float, default=0.25)
    ap.add_argument("--valid-interval", type=int, default=100)
    ap.add_argument("--beam", type=int, default=5)
    ap.add_argument("--test-fraction", type=float, default=0.03)
    args = ap.parse_args()

    t0 = time.time()
    corpus = generate_synthetic_corpus(SynthSpec(
        seed=args.seed, num_languages=3, num_sentences=args.sentences,
        valid_fraction=0.03, test_fraction=args.test_fraction))
    tok = MiniBpe(num_merges=args.merges, tag_tokens=corpus.tag_tokens())
    tok.fit(corpus.all_texts("train"))
    print(f"[{time.time()-t0:6.1f}s] corpus: {len(corpus.train_ids)} train ids "
          f"({4*len(corpus.train_ids)} pairs), {len(corpus.test_ids)} test, "
          f"vocab {len(tok.vocab)}")
    sample = corpus.all_texts("train")[:2000]
    mean_len = np.mean([len(tok.encode(t)) for t in sample])
    print(f"     mean encoded length {mean_len:.1f}")

    train = english_centric_pairs(corpus, tok, split="train")
    valid = english_centric_pairs(corpus, tok, split="valid")
    model_config = ModelConfig(vocab_size=len(tok.vocab), num_layers=2,
                               num_heads=4, d_model=args.d_model,
                               d_ff=2 * args.d_model, dropout_rate=args.dropout)
    common = dict(label_smoothing=0.1, lr_base=args.lr, warmup_steps=args.warmup,
                  max_tokens=args.max_tokens, valid_interval=args.valid_interval,
                  seed=args.seed, alpha=args.alpha)

    pre = run_stage(train, valid, model_config,
                    TrainConfig(stage="pretrain", max_steps=args.pretrain_steps,
                                **common),
                    tok.vocab, log_fn=lambda l: print("  pre ", l))
    t_pre = time.time() - t0
    print(f"[{t_pre:6.1f}s] pretrain done, best {pre.best_valid_ce:.4f} "
          f"@ {pre.best_step}")

    beam = BeamConfig(beam_size=args.beam, length_penalty=0.6)
    rep_pre = evaluate_run(corpus, tok, pre.params, model_config, beam)
    print(f"[{time.time()-t0:6.1f}s] PRE  supervised {rep_pre.supervised_avg:.2f} "
          f"zero-shot {rep_pre.zero_shot_avg:.2f} "
          f"sim L1->L2 {rep_pre.simsearch['L1->L2']:.1f} "
          f"L2->L1 {rep_pre.simsearch['L2->L1']:.1f}")

    fine = run_stage(train, valid, model_config,
                     TrainConfig(stage="finetune", max_steps=args.finetune_steps,
                                 **common),
                     tok.vocab, params=pre.params,
                     log_fn=lambda l: print("  fine", l))
    print(f"[{time.time()-t0:6.1f}s] finetune done, best {fine.best_valid_ce:.4f}")

    rep_fine = evaluate_run(corpus, tok, fine.params, model_config, beam)
    print(f"[{time.time()-t0:6.1f}s] FINE supervised {rep_fine.supervised_avg:.2f} "
          f"zero-shot {rep_fine.zero_shot_avg:.2f} "
          f"sim L1->L2 {rep_fine.simsearch['L1->L2']:.1f} "
          f"L2->L1 {rep_fine.simsearch['L2->L1']:.1f}")

    dump_pre = export_representations(corpus, tok, pre.params, model_config)
    dump_fine = export_representations(corpus, tok, fine.params, model_config)
    cos_pre = np.mean([parallel_cosine(dump_pre, a, b)
                       for a, b in (("L0", "L1"), ("L0", "L2"), ("L1", "L2"))])
    cos_fine = np.mean([parallel_cosine(dump_fine, a, b)
                        for a, b in (("L0", "L1"), ("L0", "L2"), ("L1", "L2"))])
    print(f"parallel cosine: pre {cos_pre:.4f} fine {cos_fine:.4f}")
    print(f"zero-shot delta {rep_fine.zero_shot_avg - rep_pre.zero_shot_avg:+.2f}  "
          f"supervised delta {rep_fine.supervised_avg - rep_pre.supervised_avg:+.2f}")
    print(f"total {time.time()-t0:.1f}s")


if __name__ == "__main__":
    main()
