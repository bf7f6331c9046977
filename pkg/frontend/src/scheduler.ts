/** Single in-flight request; further resample clicks queue latest-wins. */

export class LatestWins<T> {
  private inFlight = false;
  private pending: (() => Promise<T>) | null = null;
  private listeners: Array<(result: T) => void> = [];
  private errorListeners: Array<(err: unknown) => void> = [];

  onResult(fn: (result: T) => void): void {
    this.listeners.push(fn);
  }

  onError(fn: (err: unknown) => void): void {
    this.errorListeners.push(fn);
  }

  /** Submit work; if a request is running, only the newest submission survives. */
  submit(work: () => Promise<T>): void {
    if (this.inFlight) {
      this.pending = work;
      return;
    }
    this.run(work);
  }

  get busy(): boolean {
    return this.inFlight;
  }

  get queued(): boolean {
    return this.pending !== null;
  }

  private run(work: () => Promise<T>): void {
    this.inFlight = true;
    work()
      .then((result) => {
        for (const fn of this.listeners) fn(result);
      })
      .catch((err) => {
        for (const fn of this.errorListeners) fn(err);
      })
      .finally(() => {
        this.inFlight = false;
        const next = this.pending;
        this.pending = null;
        if (next) this.run(next);
      });
  }
}
