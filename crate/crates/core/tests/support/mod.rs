#![allow(dead_code)]

pub mod abv_enum;
