import {
  ApiError,
  type Leaderboard,
  type Outcome,
  type PairView,
  type VoteApi,
  type VoteReveal,
} from "../src/api";

export interface PostedVote {
  pair_id: string;
  outcome: Outcome;
  session?: string;
}

let counter = 0;

export function makePair(overrides: Partial<PairView> = {}): PairView {
  counter += 1;
  return {
    pair_id: `pair-${counter}`,
    task_id: `task-${counter}`,
    prompt: "Explain something.",
    left: "left text",
    right: "right text",
    expires_in: 1800,
    ...overrides,
  };
}

/**
 * Scriptable stand-in for the voting service.
 *
 * Pairs are served from a queue; reveals come from the `models` map keyed by
 * pair_id.  Errors and ack delays are injected per call through the public
 * fields.
 */
export class MockService implements VoteApi {
  pairs: PairView[] = [];
  models = new Map<string, { left: string; right: string }>();
  posted: PostedVote[] = [];
  board: Leaderboard = { models: [], votes: 0, tie_ratio: 0 };
  nextFetchError: Error | null = null;
  nextVoteError: Error | null = null;
  voteGate: Promise<void> | null = null;
  fetches = 0;
  boardFetches = 0;

  serve(pair: PairView, models?: { left: string; right: string }): PairView {
    this.pairs.push(pair);
    if (models) this.models.set(pair.pair_id, models);
    return pair;
  }

  async fetchPair(): Promise<PairView> {
    this.fetches += 1;
    if (this.nextFetchError) {
      const err = this.nextFetchError;
      this.nextFetchError = null;
      throw err;
    }
    const pair = this.pairs.shift();
    if (pair === undefined) throw new ApiError(409, "no votable pairs");
    return pair;
  }

  async submitVote(pairId: string, outcome: Outcome, session?: string): Promise<VoteReveal> {
    if (this.voteGate) {
      const gate = this.voteGate;
      this.voteGate = null;
      await gate;
    }
    if (this.nextVoteError) {
      const err = this.nextVoteError;
      this.nextVoteError = null;
      throw err;
    }
    this.posted.push({ pair_id: pairId, outcome, session });
    const names = this.models.get(pairId) ?? { left: "model-a", right: "model-b" };
    return { model_left: names.left, model_right: names.right, outcome };
  }

  async fetchLeaderboard(): Promise<Leaderboard> {
    this.boardFetches += 1;
    return this.board;
  }
}

/** Resolves once promise callbacks queued so far have run. */
export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
