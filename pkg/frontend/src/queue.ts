// Triage queue state machine. Decisions apply optimistically, are queued
// locally, and are posted strictly in submission order; a failed post
// parks the queue behind a retry banner instead of dropping anything.

import { ApiError } from "./api.js";
import type {
  Action,
  CandidateEntry,
  CandidatesPage,
  DecisionAck,
  RerankAck,
  SessionConfig,
  SessionInfo,
} from "./types.js";

export interface ReviewApi {
  session(): Promise<SessionInfo>;
  candidates(afterRank?: number, limit?: number): Promise<CandidatesPage>;
  decide(imageId: string, action: Action): Promise<DecisionAck>;
  rerank(): Promise<RerankAck>;
}

export interface PendingDecision {
  imageId: string;
  action: Action;
}

interface UndoRecord {
  imageId: string;
  prior: Action | null;
  index: number;
}

export interface QueueOptions {
  pageLimit?: number;
  onChange?: () => void;
}

export class TriageQueue {
  entries: CandidateEntry[] = [];
  index = 0;
  version = 0;
  total = 0;
  reviewed = 0;
  config: SessionConfig | null = null;
  pending: PendingDecision[] = [];
  banner = false;
  notice: string | null = null;
  errors: string[] = [];

  // local overlay on top of the server page; an explicit null marks a
  // decision undone locally after the server acknowledged it
  private overlay = new Map<string, Action | null>();
  private undoStack: UndoRecord[] = [];
  private flushTask: Promise<void> = Promise.resolve();
  private inFlight = false;
  private reranking = false;
  private rerankedOnce = false;
  private decisionsSinceRerank = 0;

  private readonly api: ReviewApi;
  private readonly pageLimit: number;
  private readonly onChange: () => void;

  constructor(api: ReviewApi, options: QueueOptions = {}) {
    this.api = api;
    this.pageLimit = options.pageLimit ?? 500;
    this.onChange = options.onChange ?? (() => {});
  }

  async init(): Promise<void> {
    const session = await this.api.session();
    this.config = session.config;
    this.reviewed = session.reviewed;
    await this.load();
  }

  // stateless refresh: everything below is rebuilt from the server page
  async load(): Promise<void> {
    const page = await this.api.candidates(0, this.pageLimit);
    if (this.version !== 0 && page.version !== this.version) {
      this.notice = `ranking moved to version ${page.version}`;
    }
    this.version = page.version;
    this.total = page.total;
    this.entries = page.entries;
    this.overlay.clear();
    this.undoStack = [];
    this.index = Math.min(this.index, Math.max(0, this.entries.length - 1));
    this.onChange();
  }

  focused(): CandidateEntry | null {
    return this.entries[this.index] ?? null;
  }

  decisionOf(imageId: string): Action | null {
    if (this.overlay.has(imageId)) return this.overlay.get(imageId) ?? null;
    const entry = this.entries.find((e) => e.image_id === imageId);
    return entry ? entry.decision : null;
  }

  peers(max = 8): CandidateEntry[] {
    const current = this.focused();
    if (!current) return [];
    return this.entries
      .filter((e) => e.group_key === current.group_key && e.image_id !== current.image_id)
      .slice(0, max);
  }

  next(): void {
    if (this.index < this.entries.length - 1) this.index += 1;
    this.onChange();
  }

  prev(): void {
    if (this.index > 0) this.index -= 1;
    this.onChange();
  }

  decide(action: Action): void {
    const entry = this.focused();
    if (!entry) return;
    const prior = this.decisionOf(entry.image_id);
    this.undoStack.push({ imageId: entry.image_id, prior, index: this.index });
    this.overlay.set(entry.image_id, action);
    if (prior === null) this.reviewed += 1;
    this.pending.push({ imageId: entry.image_id, action });
    this.decisionsSinceRerank += 1;
    if (this.index < this.entries.length - 1) this.index += 1;
    this.kick();
    this.onChange();
  }

  undo(): void {
    const record = this.undoStack.pop();
    if (!record) return;
    const cancellableFrom = this.inFlight ? 1 : 0;
    let queued = -1;
    for (let i = this.pending.length - 1; i >= cancellableFrom; i -= 1) {
      if (this.pending[i].imageId === record.imageId) {
        queued = i;
        break;
      }
    }
    if (queued >= 0) {
      // never sent: cancel locally, no API call needed
      this.pending.splice(queued, 1);
      if (this.pending.length === 0) this.banner = false;
      this.decisionsSinceRerank -= 1;
    } else if (record.prior !== null) {
      // already acknowledged: supersede with the prior state
      this.pending.push({ imageId: record.imageId, action: record.prior });
      this.decisionsSinceRerank += 1;
      this.kick();
    }
    if (this.decisionOf(record.imageId) !== null && record.prior === null) {
      this.reviewed -= 1;
    }
    this.overlay.set(record.imageId, record.prior);
    this.index = record.index;
    this.onChange();
  }

  retry(): void {
    this.kick();
    this.onChange();
  }

  async rerankButton(): Promise<void> {
    if (this.reranking) return; // click while a re-rank is running
    if (this.rerankedOnce && this.decisionsSinceRerank === 0) {
      this.notice = "nothing changed since the last re-rank";
      this.onChange();
      return;
    }
    this.reranking = true;
    try {
      this.kick(); // in-flight decisions go first
      await this.settle();
      if (this.pending.length > 0) return; // still failing; banner stays up
      const expected = this.version + 1;
      let ack: RerankAck;
      try {
        ack = await this.api.rerank();
      } catch (err) {
        this.banner = true;
        this.errors.push(String(err));
        return;
      }
      this.rerankedOnce = true;
      this.decisionsSinceRerank = 0;
      if (ack.version !== expected) {
        this.notice = `ranking moved to version ${ack.version} outside this session`;
      }
      this.index = 0;
      this.version = 0; // suppress load()'s version-change notice
      await this.load();
      this.version = ack.version;
    } finally {
      this.reranking = false;
      this.onChange();
    }
  }

  async settle(): Promise<void> {
    await this.flushTask;
  }

  private kick(): void {
    this.flushTask = this.flushTask.then(() => this.drain());
  }

  private async drain(): Promise<void> {
    while (this.pending.length > 0) {
      const head = this.pending[0];
      this.inFlight = true;
      let ack: DecisionAck;
      try {
        ack = await this.api.decide(head.imageId, head.action);
      } catch (err) {
        this.inFlight = false;
        if (err instanceof ApiError && !err.retryable) {
          // rejected for cause: report it loudly and move on
          this.errors.push(`${head.imageId}: ${err.message}`);
          this.pending.shift();
          this.onChange();
          continue;
        }
        this.banner = true;
        this.onChange();
        return; // keep the queue intact for retry
      }
      this.inFlight = false;
      this.pending.shift();
      this.banner = false;
      this.reviewed = ack.reviewed; // server count wins over the optimistic one
      this.onChange();
    }
  }
}
