/**
 * Pick-session state machine for one fragment pair.
 *
 * Picks alternate strictly: a pair starts on the source pane and completes
 * on the target pane. Registration unlocks at three complete pairs; the
 * session advances picking -> registered -> merged with no skipped steps.
 * The session never computes geometry itself: the registration result it
 * stores is exactly what the service returned.
 */

export type Vec3 = [number, number, number];

export interface Pick {
  position: Vec3;
  vertexIndex: number;
}

export interface PickPair {
  src: Pick;
  dst?: Pick;
}

export interface RegistrationResult {
  transform: number[];
  rmse: number;
  iterations: number;
  converged: boolean;
  trace: number[];
}

export type SessionState = "picking" | "registered" | "merged";

export const MIN_PAIRS = 3;
export const MIN_PAIRS_RULE =
  "select at least three matching points on each fragment";

export class PickSession {
  readonly sourceId: string;
  readonly targetId: string;
  private pairs: PickPair[] = [];
  private state_: SessionState = "picking";
  private registration_: RegistrationResult | null = null;
  private mergedId_: string | null = null;

  constructor(sourceId: string, targetId: string) {
    this.sourceId = sourceId;
    this.targetId = targetId;
  }

  get state(): SessionState {
    return this.state_;
  }

  get registration(): RegistrationResult | null {
    return this.registration_;
  }

  get mergedId(): string | null {
    return this.mergedId_;
  }

  /** Pane expected to receive the next pick. */
  get expecting(): "src" | "dst" {
    const last = this.pairs[this.pairs.length - 1];
    return last && last.dst === undefined ? "dst" : "src";
  }

  get completePairs(): number {
    return this.pairs.filter((p) => p.dst !== undefined).length;
  }

  get canRegister(): boolean {
    return this.state_ === "picking" && this.completePairs >= MIN_PAIRS &&
      this.expecting === "src";
  }

  allPairs(): ReadonlyArray<PickPair> {
    return this.pairs;
  }

  /** Append a pick; rejects picks on the wrong pane with a reason. */
  addPick(pane: "src" | "dst", pick: Pick): { ok: boolean; reason?: string } {
    if (this.state_ !== "picking") {
      return { ok: false, reason: `session is ${this.state_}; picking is closed` };
    }
    if (pane !== this.expecting) {
      return {
        ok: false,
        reason: `expected a ${this.expecting === "src" ? "source" : "target"} pick next`,
      };
    }
    if (pane === "src") {
      this.pairs.push({ src: pick });
    } else {
      this.pairs[this.pairs.length - 1].dst = pick;
    }
    return { ok: true };
  }

  /** Remove the most recent pick (half pair or the target half). */
  undo(): boolean {
    if (this.state_ !== "picking" || this.pairs.length === 0) return false;
    const last = this.pairs[this.pairs.length - 1];
    if (last.dst !== undefined) {
      delete last.dst;
    } else {
      this.pairs.pop();
    }
    return true;
  }

  /** Correspondence payload in the service's wire format. */
  toCorrespondencePayload(): {
    source_id: string;
    target_id: string;
    pairs: { src: Vec3; dst: Vec3 }[];
  } {
    const complete = this.pairs.filter(
      (p): p is Required<PickPair> => p.dst !== undefined,
    );
    return {
      source_id: this.sourceId,
      target_id: this.targetId,
      pairs: complete.map((p) => ({
        src: [...p.src.position] as Vec3,
        dst: [...p.dst.position] as Vec3,
      })),
    };
  }

  setRegistered(result: RegistrationResult): void {
    if (this.state_ !== "picking") {
      throw new Error(`cannot register from state ${this.state_}`);
    }
    if (this.completePairs < MIN_PAIRS) {
      throw new Error(MIN_PAIRS_RULE);
    }
    this.registration_ = result;
    this.state_ = "registered";
  }

  setMerged(meshId: string): void {
    if (this.state_ !== "registered") {
      throw new Error(`cannot merge from state ${this.state_}`);
    }
    this.mergedId_ = meshId;
    this.state_ = "merged";
  }

  /** Reopen picking after a registration the operator rejects. */
  reopen(): void {
    if (this.state_ === "registered") {
      this.state_ = "picking";
      this.registration_ = null;
    }
  }

  toJSON(): SerializedSession {
    return {
      source_id: this.sourceId,
      target_id: this.targetId,
      state: this.state_,
      pairs: this.pairs.map((p) => ({
        src: { position: [...p.src.position] as Vec3, vertex: p.src.vertexIndex },
        dst: p.dst
          ? { position: [...p.dst.position] as Vec3, vertex: p.dst.vertexIndex }
          : null,
      })),
      registration: this.registration_,
      merged_id: this.mergedId_,
    };
  }

  static fromJSON(data: SerializedSession): PickSession {
    const s = new PickSession(data.source_id, data.target_id);
    for (const pair of data.pairs) {
      s.pairs.push({
        src: { position: [...pair.src.position] as Vec3, vertexIndex: pair.src.vertex },
        ...(pair.dst
          ? { dst: { position: [...pair.dst.position] as Vec3, vertexIndex: pair.dst.vertex } }
          : {}),
      });
    }
    s.registration_ = data.registration;
    s.mergedId_ = data.merged_id;
    s.state_ = data.state;
    return s;
  }
}

export interface SerializedSession {
  source_id: string;
  target_id: string;
  state: SessionState;
  pairs: {
    src: { position: Vec3; vertex: number };
    dst: { position: Vec3; vertex: number } | null;
  }[];
  registration: RegistrationResult | null;
  merged_id: string | null;
}
