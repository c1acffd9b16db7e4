/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_pushworld_free: (a: number, b: number) => void;
export const grid_side: () => number;
export const loco_rollout: (a: number, b: number, c: number, d: bigint, e: number, f: number) => [number, number, number, number];
export const pushworld_new: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
export const pushworld_oriented_grid: (a: number) => [number, number];
export const pushworld_plan_step: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const pushworld_push: (a: number, b: number, c: number) => [number, number];
export const pushworld_push_toward: (a: number, b: number, c: number, d: number) => [number, number];
export const pushworld_state: (a: number) => [number, number];
export const pushworld_table_size: (a: number) => number;
export const shape_grid: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const shape_kinds: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
