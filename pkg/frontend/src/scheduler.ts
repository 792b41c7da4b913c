/**
 * Latest-wins request scheduling: at most one request in flight, newer
 * parameters replace any queued ones, and a response is applied only if its
 * id is still current — a response for superseded parameters is dropped, so
 * the display can never show a stale frame after a newer one.
 */
export class LatestWins<P, R> {
  private lastId = 0;
  private pending: P | null = null;
  private pumping = false;

  constructor(
    private run: (params: P) => Promise<R>,
    private apply: (params: P, result: R) => void,
    private onError: (params: P, error: unknown) => void = () => {}
  ) {}

  /** Ask for `params`; coalesces bursts while a request is in flight. */
  request(params: P): void {
    this.pending = params;
    if (!this.pumping) void this.pump();
  }

  /** Drop any in-flight response (its id is no longer current). */
  invalidate(): void {
    this.lastId++;
    this.pending = null;
  }

  get busy(): boolean {
    return this.pumping;
  }

  private async pump(): Promise<void> {
    this.pumping = true;
    try {
      while (this.pending !== null) {
        const params = this.pending;
        this.pending = null;
        const id = ++this.lastId;
        try {
          const result = await this.run(params);
          if (id === this.lastId) this.apply(params, result);
        } catch (error) {
          if (id === this.lastId) this.onError(params, error);
        }
      }
    } finally {
      this.pumping = false;
    }
  }
}
